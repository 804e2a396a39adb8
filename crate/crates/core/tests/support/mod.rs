//! Shared test helpers: a loop-nest simulator used as an independent oracle
//! for the cost model, and generators for small random problems.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use mse_core::arch::{ComputeLevel, MemoryLevel};
use mse_core::workload::{Dimension, TensorProjection, TensorRole};
use mse_core::{AcceleratorConfig, LayerWorkload, Mapping};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Temporal(usize),
    /// Spatial fan-out beneath a memory level.
    Spatial(usize),
}

#[derive(Debug, Clone, Copy)]
struct Loop {
    dim: usize,
    trips: u64,
    kind: Kind,
    /// Step of this loop's index in the dim's global coordinate.
    stride: u64,
}

/// The full nest, outermost first: level-0 temporal loops, the fan-outs
/// beneath level 0, level-1 temporal loops, and so on.
fn build_nest(m: &Mapping, a: &AcceleratorConfig) -> Vec<Loop> {
    let mut nest = Vec::new();
    for l in 0..a.num_memory_levels() {
        for &d in &m.permutations[l] {
            nest.push(Loop { dim: d, trips: m.temporal[l][d], kind: Kind::Temporal(l), stride: 0 });
        }
        for c in 0..a.num_compute_levels() {
            if a.attach(c) == l {
                for d in 0..m.num_dims() {
                    nest.push(Loop { dim: d, trips: m.spatial[c][d], kind: Kind::Spatial(l), stride: 0 });
                }
            }
        }
    }
    let mut inner = vec![1u64; m.num_dims()];
    for lp in nest.iter_mut().rev() {
        lp.stride = inner[lp.dim];
        inner[lp.dim] *= lp.trips;
    }
    nest
}

fn odometer(trips: &[u64]) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for &t in trips {
        out = out.into_iter().flat_map(|p| (0..t).map(move |i| [p.clone(), vec![i]].concat())).collect();
    }
    out
}

fn relevant_dims(w: &LayerWorkload, role: TensorRole) -> Vec<usize> {
    (0..w.num_dims()).filter(|&d| w.shape(role).is_relevant(d)).collect()
}

/// Distinct tensor elements touched by a tile with the given per-dim extents.
fn tile_words(w: &LayerWorkload, role: TensorRole, extents: &[u64]) -> u128 {
    let shape = w.shape(role);
    let dims = relevant_dims(w, role);
    let mut elements = HashSet::new();
    for idx in odometer(&dims.iter().map(|&d| extents[d]).collect::<Vec<_>>()) {
        let at = |d: usize| idx[dims.iter().position(|&x| x == d).unwrap()];
        let mut coord: Vec<u64> = shape.plain.iter().map(|&d| at(d)).collect();
        coord.extend(shape.halo.iter().map(|&(p, q)| at(p) + at(q)));
        elements.insert(coord);
    }
    elements.len() as u128
}

pub struct Simulated {
    /// `[level][weight, input, output]`
    pub words: Vec<[u128; 3]>,
    pub compute_cycles: u128,
    pub macs: u128,
}

/// Execute the loop nest and count buffer fills, write-backs and steps.
///
/// A buffer instance holds one tile per tensor, identified by the indices
/// of the enclosing loops over that tensor's dims. Whenever the identity
/// changes the new tile is fetched; output tiles are written back on
/// eviction and read back when they return. The parent serves each
/// distinct tile once per step, however many of its children ask for it.
pub fn simulate(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Simulated {
    let nest = build_nest(m, a);
    let levels = a.num_memory_levels();
    let mut words = vec![[0u128; 3]; levels];

    for child in 1..levels {
        let parent = child - 1;
        let outside: Vec<Loop> = nest
            .iter()
            .copied()
            .filter(|lp| match lp.kind {
                Kind::Temporal(l) | Kind::Spatial(l) => l < child,
            })
            .collect();
        let time: Vec<Loop> = outside.iter().copied().filter(|lp| matches!(lp.kind, Kind::Temporal(_))).collect();
        let space: Vec<Loop> = outside.iter().copied().filter(|lp| matches!(lp.kind, Kind::Spatial(_))).collect();
        // tile extents: everything nested inside the child
        let mut extents = vec![1u64; w.num_dims()];
        for lp in &nest {
            let inside = match lp.kind {
                Kind::Temporal(l) | Kind::Spatial(l) => l >= child,
            };
            if inside {
                extents[lp.dim] *= lp.trips;
            }
        }
        let instances = odometer(&space.iter().map(|lp| lp.trips).collect::<Vec<_>>());
        let steps = odometer(&time.iter().map(|lp| lp.trips).collect::<Vec<_>>());

        for role in TensorRole::ALL {
            let r = role.index();
            let dims = relevant_dims(w, role);
            let fp = tile_words(w, role, &extents);
            let key = |step: &[u64], inst: &[u64]| -> Vec<u64> {
                let mut base = vec![0u64; w.num_dims()];
                for (lp, &i) in time.iter().zip(step) {
                    base[lp.dim] += i * lp.stride;
                }
                for (lp, &i) in space.iter().zip(inst) {
                    base[lp.dim] += i * lp.stride;
                }
                dims.iter().map(|&d| base[d]).collect()
            };
            let parent_of = |inst: &[u64]| -> Vec<u64> {
                space.iter().zip(inst).filter(|(lp, _)| matches!(lp.kind, Kind::Spatial(l) if l < parent)).map(|(_, &i)| i).collect()
            };
            let mut held: HashMap<usize, Vec<u64>> = HashMap::new();
            let mut seen: HashMap<usize, HashSet<Vec<u64>>> = HashMap::new();
            for step in &steps {
                let mut served: BTreeSet<(Vec<u64>, Vec<u64>)> = BTreeSet::new();
                let mut written: BTreeSet<(Vec<u64>, Vec<u64>)> = BTreeSet::new();
                for (n, inst) in instances.iter().enumerate() {
                    let k = key(step, inst);
                    if held.get(&n) == Some(&k) {
                        continue;
                    }
                    let seen_here = seen.entry(n).or_default();
                    if role == TensorRole::Output {
                        if let Some(old) = held.get(&n) {
                            words[child][r] += fp;
                            written.insert((parent_of(inst), old.clone()));
                        }
                        if seen_here.contains(&k) {
                            words[child][r] += fp;
                            served.insert((parent_of(inst), k.clone()));
                        }
                    } else {
                        words[child][r] += fp;
                        served.insert((parent_of(inst), k.clone()));
                    }
                    seen_here.insert(k.clone());
                    held.insert(n, k);
                }
                words[parent][r] += fp * (served.len() + written.len()) as u128;
            }
            if role == TensorRole::Output {
                let mut written = BTreeSet::new();
                for (n, inst) in instances.iter().enumerate() {
                    if let Some(old) = held.get(&n) {
                        words[child][r] += fp;
                        written.insert((parent_of(inst), old.clone()));
                    }
                }
                words[parent][r] += fp * written.len() as u128;
            }
        }
    }

    // run every MAC once to check coverage and count temporal steps
    let temporal: Vec<Loop> = nest.iter().copied().filter(|lp| matches!(lp.kind, Kind::Temporal(_))).collect();
    let spatial: Vec<Loop> = nest.iter().copied().filter(|lp| matches!(lp.kind, Kind::Spatial(_))).collect();
    let mut cycles = 0u128;
    let mut covered = HashSet::new();
    let lanes = odometer(&spatial.iter().map(|lp| lp.trips).collect::<Vec<_>>());
    for step in odometer(&temporal.iter().map(|lp| lp.trips).collect::<Vec<_>>()) {
        cycles += 1;
        for lane in &lanes {
            let mut point = vec![0u64; w.num_dims()];
            for (lp, &i) in temporal.iter().zip(&step) {
                point[lp.dim] += i * lp.stride;
            }
            for (lp, &i) in spatial.iter().zip(lane) {
                point[lp.dim] += i * lp.stride;
            }
            assert!(covered.insert(point), "a MAC ran twice");
        }
    }
    Simulated { words, compute_cycles: cycles, macs: covered.len() as u128 }
}

const NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// Custom workload with up to `max_dims` dims of extent `1..=max_extent`
/// and random tensor projections, sometimes with a halo pair on the input.
pub fn random_workload<R: Rng>(rng: &mut R, max_dims: usize, max_extent: u64) -> LayerWorkload {
    let n = rng.gen_range(1..=max_dims);
    let dims: Vec<Dimension> =
        (0..n).map(|i| Dimension { name: NAMES[i].to_string(), extent: rng.gen_range(1..=max_extent) }).collect();
    let subset = |rng: &mut R| -> Vec<String> {
        let mut s: Vec<String> = dims.iter().filter(|_| rng.gen_bool(0.6)).map(|d| d.name.clone()).collect();
        if s.is_empty() {
            s.push(dims.choose(rng).unwrap().name.clone());
        }
        s
    };
    let weight = subset(rng);
    let output = subset(rng);
    let input = subset(rng);
    let halo = if n >= 2 && rng.gen_bool(0.4) {
        let mut pair: Vec<&Dimension> = dims.iter().collect();
        pair.shuffle(rng);
        vec![(pair[0].name.clone(), pair[1].name.clone())]
    } else {
        vec![]
    };
    let projections = vec![
        TensorProjection { tensor: TensorRole::Weight, relevant_dims: weight, halo_pairs: vec![] },
        TensorProjection { tensor: TensorRole::Input, relevant_dims: input, halo_pairs: halo },
        TensorProjection { tensor: TensorRole::Output, relevant_dims: output, halo_pairs: vec![] },
    ];
    LayerWorkload::custom("rand", dims, projections).expect("generated workload is valid")
}

/// Two or three memory levels with one or two compute levels.
pub fn random_arch<R: Rng>(rng: &mut R) -> AcceleratorConfig {
    let levels = rng.gen_range(2..=3);
    let names = ["DRAM", "L2", "L1"];
    let mut memory = Vec::new();
    for l in 0..levels {
        memory.push(MemoryLevel {
            name: names[3 - levels + l].to_string(),
            capacity_words: (l > 0).then(|| rng.gen_range(8..=400)),
            access_energy_pj: [200.0, 6.0, 1.0][3 - levels + l],
            bandwidth_words_per_cycle: rng.gen_range(1..=16) as f64,
            instances: 1,
        });
    }
    let computes = rng.gen_range(1..=2);
    let mut attach: Vec<usize> = (0..computes).map(|_| rng.gen_range(0..levels)).collect();
    attach.sort();
    let compute = attach
        .iter()
        .enumerate()
        .map(|(i, &at)| ComputeLevel {
            name: format!("U{i}"),
            units: rng.gen_range(1..=6),
            nested_below: memory[at].name.clone(),
        })
        .collect();
    AcceleratorConfig::new("rand", 1, 0.5, memory, compute).expect("generated arch is valid")
}

/// A random (workload, arch, legal mapping) triple.
pub fn random_case<R: Rng>(rng: &mut R, max_dims: usize, max_extent: u64) -> (LayerWorkload, AcceleratorConfig, Mapping) {
    loop {
        let w = random_workload(rng, max_dims, max_extent);
        let a = random_arch(rng);
        if let Ok(m) = mse_core::mapping::random_mapping(&w, &a, rng, 200) {
            return (w, a, m);
        }
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn data(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}
