//! Warm-start initialization: reuse the stored mapping of the most similar
//! solved workload, keeping its loop orders and parallel dims and rescaling
//! its tiles to the new extents.

use std::collections::HashSet;

use super::replay::ReplayBuffer;
use crate::arch::AcceleratorConfig;
use crate::error::{Error, Result};
use crate::factor::{compositions, prime_list};
use crate::mapping::{canonicalize, capacity_violations, level_footprint, Mapping};
use crate::workload::{editing_distance, log_extent_distance, LayerWorkload, TensorRole};

/// How the source entry is picked from the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeedPolicy {
    /// Fewest differing extents, then closest in log scale, then most recent.
    #[default]
    Similarity,
    /// The most recently recorded compatible entry.
    PreviousLayer,
}

/// Compatible entries ordered by preference.
pub fn ranked_entries(w: &LayerWorkload, buf: &ReplayBuffer, policy: SeedPolicy) -> Vec<usize> {
    let mut scored: Vec<(usize, usize, f64)> = Vec::new();
    for (i, e) in buf.entries().iter().enumerate() {
        let Ok(stored) = e.to_workload() else { continue };
        match editing_distance(w, &stored) {
            Ok(d) if d != usize::MAX && same_dim_order(w, &stored) => {
                scored.push((i, d, log_extent_distance(w, &stored)));
            }
            _ => {}
        }
    }
    match policy {
        SeedPolicy::Similarity => {
            scored.sort_by(|x, y| x.1.cmp(&y.1).then(x.2.total_cmp(&y.2)).then(y.0.cmp(&x.0)));
        }
        SeedPolicy::PreviousLayer => scored.sort_by_key(|x| std::cmp::Reverse(x.0)),
    }
    scored.into_iter().map(|(i, _, _)| i).collect()
}

fn same_dim_order(a: &LayerWorkload, b: &LayerWorkload) -> bool {
    a.dims().iter().map(|d| &d.name).eq(b.dims().iter().map(|d| &d.name))
}

/// The seed mapping alone: the preferred entry's mapping rescaled to `w`.
/// Entries that cannot be rescaled are passed over.
pub fn seed_mapping(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    buf: &ReplayBuffer,
    policy: SeedPolicy,
) -> Result<Option<Mapping>> {
    buf.check_scope(a)?;
    for i in ranked_entries(w, buf, policy) {
        let entry = &buf.entries()[i];
        let from = entry.to_workload()?;
        if let Ok(m) = scale_tiles(&entry.mapping, &from, w, a) {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// Up to `k` initial mappings: the rescaled mappings of the `k` preferred
/// entries, best first, with canonical duplicates dropped. Empty when nothing
/// in the buffer applies.
pub fn warm_start_init(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    buf: &ReplayBuffer,
    k: usize,
    policy: SeedPolicy,
) -> Result<Vec<Mapping>> {
    buf.check_scope(a)?;
    let mut out: Vec<Mapping> = Vec::with_capacity(k);
    let mut seen = HashSet::new();
    for i in ranked_entries(w, buf, policy) {
        if out.len() == k {
            break;
        }
        let entry = &buf.entries()[i];
        let from = entry.to_workload()?;
        if let Ok(m) = scale_tiles(&entry.mapping, &from, w, a) {
            if seen.insert(canonicalize(&m)) {
                out.push(m);
            }
        }
    }
    Ok(out)
}

/// Adapt a mapping found for `from` to the extents of `to`.
///
/// A changed dim whose new extent is a multiple of its inner factors only
/// has its outermost factor rewritten. Otherwise the dim is refactorized to
/// the ordered factorization closest in log scale to the old one, within the
/// unit counts. Capacity overflows are then repaired by moving primes of the
/// largest tile outward, innermost overflowing level first.
pub fn scale_tiles(m: &Mapping, from: &LayerWorkload, to: &LayerWorkload, a: &AcceleratorConfig) -> Result<Mapping> {
    if from.op_kind() != to.op_kind() || !same_dim_order(from, to) {
        return Err(Error::Unscalable(format!("{} and {} have different loop dimensions", from.id(), to.id())));
    }
    let levels = a.num_memory_levels();
    let mut out = m.clone();
    for d in 0..to.num_dims() {
        let target = to.extent(d);
        if target == from.extent(d) {
            continue;
        }
        let inner: u64 = (1..out.num_positions()).map(|p| out.factor(p, d)).product();
        if target.is_multiple_of(inner) {
            out.temporal[0][d] = target / inner;
            continue;
        }
        let old = out.dim_factors(d);
        let others: Vec<u64> = (0..a.num_compute_levels())
            .map(|c| (0..to.num_dims()).filter(|&x| x != d).map(|x| out.spatial[c][x]).product())
            .collect();
        let fits_units = |c: &[u64]| {
            a.compute_levels.iter().enumerate().all(|(k, level)| others[k] * c[levels + k] <= level.units)
        };
        let distance = |c: &[u64]| -> f64 {
            c.iter().zip(&old).map(|(&n, &o)| ((n as f64) / (o as f64)).ln().abs()).sum()
        };
        let mut best: Option<(f64, Vec<u64>)> = None;
        for c in compositions(target, out.num_positions()) {
            if !fits_units(&c) {
                continue;
            }
            let dist = distance(&c);
            if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                best = Some((dist, c));
            }
        }
        let (_, c) = best.expect("all-outermost factorization always fits");
        out.set_dim_factors(d, &c);
    }
    repair_capacity(out, to, a)
}

fn repair_capacity(mut m: Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Result<Mapping> {
    loop {
        let overflowing: Vec<usize> = (1..a.num_memory_levels())
            .filter(|&l| {
                a.memory_levels[l]
                    .capacity_words
                    .is_some_and(|cap| level_footprint(&m, w, a, l) > cap as u128)
            })
            .collect();
        let Some(&l) = overflowing.last() else {
            debug_assert!(capacity_violations(&m, w, a).is_empty());
            return Ok(m);
        };
        let cum = m.cumulative(a, l);
        let mut tensors = TensorRole::ALL;
        tensors.sort_by_key(|&t| std::cmp::Reverse(crate::cost::footprint_of(&cum, w.shape(t))));
        // positions whose factors make up the tile at level l
        let positions: Vec<usize> = (l..a.num_memory_levels())
            .chain((0..a.num_compute_levels()).filter(|&c| a.attach(c) >= l).map(|c| a.num_memory_levels() + c))
            .collect();
        // the largest tile's biggest factor; smaller tiles only when it has none left
        let pick = tensors.iter().find_map(|&t| {
            let shape = w.shape(t);
            let mut pick: Option<(u64, usize, usize)> = None;
            for &p in &positions {
                for d in (0..w.num_dims()).filter(|&d| shape.is_relevant(d)) {
                    let f = m.factor(p, d);
                    if f > 1 && pick.is_none_or(|(best, _, _)| f > best) {
                        pick = Some((f, p, d));
                    }
                }
            }
            pick
        });
        let Some((f, p, d)) = pick else {
            return Err(Error::Unscalable(format!(
                "{} cannot hold even the minimal tiles of {}",
                a.memory_levels[l].name,
                w.id()
            )));
        };
        let prime = prime_list(f)[0];
        *m.factor_mut(p, d) /= prime;
        m.temporal[l - 1][d] *= prime;
    }
}
