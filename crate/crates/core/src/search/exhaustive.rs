//! Exhaustive oracle over canonical mappings.
//!
//! Only loops with a factor above one are permuted, and the innermost
//! level keeps the reference order, so each canonical point is visited
//! once. Capacity does not depend on loop order, which lets the tilings be
//! filtered before any permutation is expanded.

use std::collections::HashMap;

use num_bigint::BigUint;

use super::{better, Fitness, Objective};
use crate::arch::AcceleratorConfig;
use crate::cost::{CostReport, DensityContext};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::factor::{compositions, permutations};
use crate::mapping::{capacity_violations, Mapping};
use crate::workload::LayerWorkload;

pub const DEFAULT_ORACLE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub mapping: Mapping,
    pub report: CostReport,
    /// Legal canonical mappings evaluated.
    pub evaluated: u64,
    /// Canonical points in the space, legal or not.
    pub space_size: BigUint,
}

/// Number of canonical mappings, counting illegal ones.
pub fn canonical_space_size(w: &LayerWorkload, a: &AcceleratorConfig) -> BigUint {
    let outer = a.num_memory_levels() - 1;
    let positions = a.num_memory_levels() + a.num_compute_levels();
    // active-loop counts per non-innermost level -> number of tilings
    let mut states: HashMap<Vec<usize>, BigUint> = HashMap::from([(vec![0; outer], BigUint::from(1u32))]);
    for d in 0..w.num_dims() {
        let mut by_mask: HashMap<Vec<usize>, u64> = HashMap::new();
        for c in compositions(w.extent(d), positions) {
            let mask: Vec<usize> = (0..outer).map(|l| (c[l] > 1) as usize).collect();
            *by_mask.entry(mask).or_default() += 1;
        }
        let mut next: HashMap<Vec<usize>, BigUint> = HashMap::new();
        for (state, count) in &states {
            for (mask, n) in &by_mask {
                let key: Vec<usize> = state.iter().zip(mask).map(|(s, m)| s + m).collect();
                *next.entry(key).or_default() += count * BigUint::from(*n);
            }
        }
        states = next;
    }
    let factorial = |k: usize| (1..=k as u64).map(BigUint::from).product::<BigUint>();
    states
        .into_iter()
        .map(|(state, count)| state.into_iter().map(factorial).product::<BigUint>() * count)
        .sum()
}

/// Minimum-EDP legal mapping. Ties go to lower energy, then to the smaller
/// canonical mapping.
pub fn exhaustive_search(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    ctx: &DensityContext,
    cap: u64,
    mode: ExecMode,
) -> Result<ExhaustiveResult> {
    ctx.validate()?;
    let space_size = canonical_space_size(w, a);
    if space_size > BigUint::from(cap) {
        return Err(Error::SpaceTooLarge { size: space_size.to_string(), cap });
    }
    let tilings = legal_tilings(w, a);
    let objective = Objective::Edp(*ctx);
    let per_tiling = exec::map(mode, &tilings, |t| best_order(t, w, a, &objective));
    let mut evaluated = 0;
    let mut best: Option<(Mapping, Fitness)> = None;
    for (n, candidate) in per_tiling {
        evaluated += n;
        let Some((m, f)) = candidate else { continue };
        if best.as_ref().is_none_or(|(bm, bf)| better((&f, &m), (bf, bm)).is_lt()) {
            best = Some((m, f));
        }
    }
    let (mapping, fitness) = best.ok_or(Error::NoLegalSample { attempts: 0 })?;
    Ok(ExhaustiveResult { mapping, report: fitness.report, evaluated, space_size })
}

/// Every factor assignment that respects unit counts and capacities, with
/// reference permutations.
fn legal_tilings(w: &LayerWorkload, a: &AcceleratorConfig) -> Vec<Mapping> {
    let levels = a.num_memory_levels();
    let positions = levels + a.num_compute_levels();
    let per_dim: Vec<Vec<Vec<u64>>> = (0..w.num_dims()).map(|d| compositions(w.extent(d), positions)).collect();
    let mut current = Mapping::trivial(w, a);
    let mut used = vec![1u64; a.num_compute_levels()];
    let mut out = Vec::new();
    fill(0, &per_dim, w, a, &mut current, &mut used, &mut out);
    out
}

fn fill(
    d: usize,
    per_dim: &[Vec<Vec<u64>>],
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    current: &mut Mapping,
    used: &mut [u64],
    out: &mut Vec<Mapping>,
) {
    if d == per_dim.len() {
        if capacity_violations(current, w, a).is_empty() {
            out.push(current.clone());
        }
        return;
    }
    let levels = a.num_memory_levels();
    'next: for c in &per_dim[d] {
        for (k, level) in a.compute_levels.iter().enumerate() {
            if used[k].saturating_mul(c[levels + k]) > level.units {
                continue 'next;
            }
        }
        for k in 0..used.len() {
            used[k] *= c[levels + k];
        }
        current.set_dim_factors(d, c);
        fill(d + 1, per_dim, w, a, current, used, out);
        for k in 0..used.len() {
            used[k] /= c[levels + k];
        }
    }
}

/// Best loop order for one tiling and the number of orders tried.
fn best_order(
    tiling: &Mapping,
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    objective: &Objective,
) -> (u64, Option<(Mapping, Fitness)>) {
    let d = tiling.num_dims();
    let inner = tiling.num_levels() - 1;
    let options: Vec<Vec<Vec<usize>>> = (0..inner)
        .map(|l| {
            let active: Vec<usize> = (0..d).filter(|&x| tiling.temporal[l][x] > 1).collect();
            let rest: Vec<usize> = (0..d).filter(|&x| tiling.temporal[l][x] == 1).collect();
            permutations(&active)
                .into_iter()
                .map(|mut p| {
                    p.extend(&rest);
                    p
                })
                .collect()
        })
        .collect();
    let mut choice = vec![0usize; inner];
    let mut m = tiling.clone();
    let mut best: Option<(Mapping, Fitness)> = None;
    let mut count = 0;
    loop {
        for l in 0..inner {
            m.permutations[l] = options[l][choice[l]].clone();
        }
        let f = objective.fitness(&m, w, a);
        count += 1;
        if best.as_ref().is_none_or(|(bm, bf)| better((&f, &m), (bf, bm)).is_lt()) {
            best = Some((m.clone(), f));
        }
        // odometer over the per-level choices
        let mut l = 0;
        loop {
            if l == inner {
                return (count, best);
            }
            choice[l] += 1;
            if choice[l] < options[l].len() {
                break;
            }
            choice[l] = 0;
            l += 1;
        }
    }
}
