//! Variation operators, one per map-space axis plus crossover. Every
//! operator returns a legal mapping: when no legal variant turns up within
//! [`OPERATOR_RETRIES`] draws the input comes back unchanged.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::arch::AcceleratorConfig;
use crate::cost::{self, DensityContext};
use crate::factor::prime_list;
use crate::mapping::{fits, Mapping};
use crate::workload::LayerWorkload;

pub const OPERATOR_RETRIES: usize = 50;

/// Move one prime factor of one dimension between two positions (temporal
/// levels or compute levels).
pub fn mutate_tile<R: Rng + ?Sized>(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig, rng: &mut R) -> Mapping {
    let dims: Vec<usize> = (0..w.num_dims()).filter(|&d| w.extent(d) > 1).collect();
    if dims.is_empty() || m.num_positions() < 2 {
        return m.clone();
    }
    for _ in 0..OPERATOR_RETRIES {
        let d = *dims.choose(rng).expect("non-empty");
        let sources: Vec<usize> = (0..m.num_positions()).filter(|&p| m.factor(p, d) > 1).collect();
        let src = *sources.choose(rng).expect("extent > 1 has a factor somewhere");
        let p = *prime_list(m.factor(src, d)).choose(rng).expect("factor > 1");
        let mut dst = rng.gen_range(0..m.num_positions() - 1);
        if dst >= src {
            dst += 1;
        }
        let mut out = m.clone();
        *out.factor_mut(src, d) /= p;
        *out.factor_mut(dst, d) *= p;
        if fits(&out, w, a) {
            return out;
        }
    }
    m.clone()
}

/// Swap two loops in the permutation of one memory level.
pub fn mutate_order<R: Rng + ?Sized>(m: &Mapping, rng: &mut R) -> Mapping {
    let d = m.num_dims();
    if d < 2 {
        return m.clone();
    }
    let mut out = m.clone();
    let level = rng.gen_range(0..m.num_levels());
    let i = rng.gen_range(0..d);
    let mut j = rng.gen_range(0..d - 1);
    if j >= i {
        j += 1;
    }
    out.permutations[level].swap(i, j);
    out
}

/// Either fold a spatial factor back into the temporal factor of the level
/// the compute level hangs beneath, or move one temporal prime onto a
/// compute level with spare units.
pub fn mutate_parallelism<R: Rng + ?Sized>(
    m: &Mapping,
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    rng: &mut R,
) -> Mapping {
    if a.compute_levels.iter().all(|c| c.units == 1) {
        return m.clone();
    }
    for _ in 0..OPERATOR_RETRIES {
        let c = rng.gen_range(0..a.num_compute_levels());
        let home = a.attach(c);
        let mut out = m.clone();
        if rng.gen_bool(0.5) {
            let parallel: Vec<usize> = (0..w.num_dims()).filter(|&d| m.spatial[c][d] > 1).collect();
            let Some(&d) = parallel.choose(rng) else { continue };
            out.temporal[home][d] *= out.spatial[c][d];
            out.spatial[c][d] = 1;
        } else {
            let used: u64 = m.spatial[c].iter().product();
            let candidates: Vec<(usize, usize)> = (0..m.num_levels())
                .flat_map(|l| (0..w.num_dims()).map(move |d| (l, d)))
                .filter(|&(l, d)| m.temporal[l][d] > 1)
                .collect();
            let Some(&(l, d)) = candidates.choose(rng) else { continue };
            let p = *prime_list(m.temporal[l][d]).choose(rng).expect("factor > 1");
            if used.saturating_mul(p) > a.compute_levels[c].units {
                continue;
            }
            out.temporal[l][d] /= p;
            out.spatial[c][d] *= p;
        }
        if fits(&out, w, a) {
            return out;
        }
    }
    m.clone()
}

/// Child taking each dimension's factor vector and each level's permutation
/// from either parent; `None` if no legal child turned up.
pub fn try_crossover<R: Rng + ?Sized>(
    p1: &Mapping,
    p2: &Mapping,
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    rng: &mut R,
) -> Option<Mapping> {
    for _ in 0..OPERATOR_RETRIES {
        let mut child = p1.clone();
        for d in 0..w.num_dims() {
            if rng.gen_bool(0.5) {
                child.set_dim_factors(d, &p2.dim_factors(d));
            }
        }
        for l in 0..p1.num_levels() {
            if rng.gen_bool(0.5) {
                child.permutations[l] = p2.permutations[l].clone();
            }
        }
        if fits(&child, w, a) {
            return Some(child);
        }
    }
    None
}

/// [`try_crossover`], falling back to the parent with the lower dense EDP.
pub fn crossover<R: Rng + ?Sized>(
    p1: &Mapping,
    p2: &Mapping,
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    rng: &mut R,
) -> Mapping {
    try_crossover(p1, p2, w, a, rng).unwrap_or_else(|| {
        let ctx = DensityContext::dense();
        let e1 = cost::evaluate_unchecked(p1, w, a, &ctx).edp;
        let e2 = cost::evaluate_unchecked(p2, w, a, &ctx).edp;
        if e2 < e1 { p2.clone() } else { p1.clone() }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{is_legal, random_mapping};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (LayerWorkload, AcceleratorConfig) {
        (LayerWorkload::conv2d("c", [1, 32, 16, 14, 14, 3, 3]).unwrap(), AcceleratorConfig::accel_b())
    }

    #[test]
    fn tile_moves_one_prime() {
        let (w, a) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = random_mapping(&w, &a, &mut rng, 1000).unwrap();
            let n = mutate_tile(&m, &w, &a, &mut rng);
            assert!(is_legal(&n, &w, &a).unwrap().is_legal());
            assert_eq!(n.permutations, m.permutations);
            let changed: Vec<usize> = (0..w.num_dims()).filter(|&d| n.dim_factors(d) != m.dim_factors(d)).collect();
            assert!(changed.len() <= 1);
        }
    }

    #[test]
    fn order_only_touches_one_level() {
        let (w, a) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_mapping(&w, &a, &mut rng, 1000).unwrap();
        let n = mutate_order(&m, &mut rng);
        assert_eq!(n.temporal, m.temporal);
        assert_eq!(n.spatial, m.spatial);
        let diff = (0..m.num_levels()).filter(|&l| n.permutations[l] != m.permutations[l]).count();
        assert_eq!(diff, 1);
    }

    #[test]
    fn parallelism_round_trip_restores_products() {
        let (w, a) = setup();
        let mut m = Mapping::trivial(&w, &a);
        m.temporal[0] = vec![1, 16, 16, 14, 14, 3, 3];
        m.spatial[0][1] = 2;
        // fold the K fan-out back into L2 (the PE array's home level)...
        let home = a.attach(0);
        let mut folded = m.clone();
        folded.temporal[home][1] *= 2;
        folded.spatial[0][1] = 1;
        // ...and spread it out again
        let mut again = folded.clone();
        again.temporal[home][1] /= 2;
        again.spatial[0][1] *= 2;
        assert_eq!(again, m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = mutate_parallelism(&m, &w, &a, &mut rng);
            assert!(is_legal(&n, &w, &a).unwrap().is_legal());
            for d in 0..w.num_dims() {
                assert_eq!(n.dim_factors(d).iter().product::<u64>(), w.extent(d));
            }
        }
    }

    #[test]
    fn crossover_children_are_legal() {
        let (w, a) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let p1 = random_mapping(&w, &a, &mut rng, 1000).unwrap();
            let p2 = random_mapping(&w, &a, &mut rng, 1000).unwrap();
            let c = crossover(&p1, &p2, &w, &a, &mut rng);
            assert!(is_legal(&c, &w, &a).unwrap().is_legal());
            for d in 0..w.num_dims() {
                let f = c.dim_factors(d);
                assert!(f == p1.dim_factors(d) || f == p2.dim_factors(d));
            }
        }
    }
}
