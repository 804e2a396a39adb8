//! The map-space representation.
//!
//! A [`Mapping`] assigns every loop dimension a factor at each memory level
//! (temporal tiling) and at each compute level (spatial parallelism), plus a
//! loop permutation per memory level. Positions of a dimension are numbered
//! `0..L` for the temporal factors (outermost level first) followed by
//! `L..L+C` for the spatial factors.
//!
//! The loop nest a mapping denotes is, outermost first: the temporal loops
//! of level 0 in permutation order, the spatial fan-outs nested below level
//! 0, the temporal loops of level 1, and so on down to the MAC.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::AcceleratorConfig;
use crate::cost;
use crate::error::{Error, Result};
use crate::factor::{composition_count, prime_list, sample_composition};
use crate::workload::{LayerWorkload, TensorRole};

pub const DEFAULT_SAMPLE_RETRIES: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mapping {
    /// `temporal[level][dim]`
    pub temporal: Vec<Vec<u64>>,
    /// `permutations[level]`: dim indices, outermost loop first.
    pub permutations: Vec<Vec<usize>>,
    /// `spatial[compute_level][dim]`
    pub spatial: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Factorization { dim: String, product: u128, extent: u64 },
    Capacity { level: String, footprint: u128, capacity: u64 },
    Units { compute_level: String, used: u128, units: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Factorization { dim, product, extent } => {
                write!(f, "dim {dim}: factors multiply to {product}, extent is {extent}")
            }
            Violation::Capacity { level, footprint, capacity } => {
                write!(f, "level {level}: tiles need {footprint} words, capacity is {capacity}")
            }
            Violation::Units { compute_level, used, units } => {
                write!(f, "compute level {compute_level}: {used} parallel units requested, {units} available")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Legal,
    Illegal(Vec<Violation>),
}

impl Verdict {
    pub fn is_legal(&self) -> bool {
        matches!(self, Verdict::Legal)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Verdict::Legal => &[],
            Verdict::Illegal(v) => v,
        }
    }
}

impl Mapping {
    /// Every factor at the outermost level, nothing parallel, identity orders.
    pub fn trivial(w: &LayerWorkload, a: &AcceleratorConfig) -> Mapping {
        let d = w.num_dims();
        let mut temporal = vec![vec![1u64; d]; a.num_memory_levels()];
        temporal[0] = w.extents();
        Mapping {
            temporal,
            permutations: vec![(0..d).collect(); a.num_memory_levels()],
            spatial: vec![vec![1u64; d]; a.num_compute_levels()],
        }
    }

    pub fn num_levels(&self) -> usize {
        self.temporal.len()
    }

    pub fn num_dims(&self) -> usize {
        self.temporal.first().map_or(0, |t| t.len())
    }

    pub fn num_positions(&self) -> usize {
        self.temporal.len() + self.spatial.len()
    }

    pub fn factor(&self, pos: usize, dim: usize) -> u64 {
        let l = self.temporal.len();
        if pos < l {
            self.temporal[pos][dim]
        } else {
            self.spatial[pos - l][dim]
        }
    }

    pub fn factor_mut(&mut self, pos: usize, dim: usize) -> &mut u64 {
        let l = self.temporal.len();
        if pos < l {
            &mut self.temporal[pos][dim]
        } else {
            &mut self.spatial[pos - l][dim]
        }
    }

    /// All factors of one dimension, in position order.
    pub fn dim_factors(&self, dim: usize) -> Vec<u64> {
        (0..self.num_positions()).map(|p| self.factor(p, dim)).collect()
    }

    pub fn set_dim_factors(&mut self, dim: usize, factors: &[u64]) {
        for (p, &f) in factors.iter().enumerate() {
            *self.factor_mut(p, dim) = f;
        }
    }

    /// Product of all spatial factors: the number of MACs issued per cycle.
    pub fn spatial_parallelism(&self) -> u128 {
        self.spatial.iter().flatten().map(|&f| f as u128).product()
    }

    /// Product of spatial factors of the compute levels fanning out beneath
    /// memory levels strictly outside `level`: how many copies of `level`
    /// are in use.
    pub fn instances(&self, a: &AcceleratorConfig, level: usize) -> u128 {
        (0..self.spatial.len())
            .filter(|&c| a.attach(c) < level)
            .map(|c| self.spatial[c].iter().map(|&f| f as u128).product::<u128>())
            .product()
    }

    /// Per-dim extent of the tile resident at `level`: the product of the
    /// temporal factors at `level` and below, and of the spatial factors of
    /// compute levels nested at or below it.
    pub fn cumulative(&self, a: &AcceleratorConfig, level: usize) -> Vec<u64> {
        let d = self.num_dims();
        (0..d)
            .map(|dim| {
                let t: u64 = self.temporal[level..].iter().map(|f| f[dim]).product();
                let s: u64 = (0..self.spatial.len())
                    .filter(|&c| a.attach(c) >= level)
                    .map(|c| self.spatial[c][dim])
                    .product();
                t * s
            })
            .collect()
    }

    /// Dims with a temporal factor above one at `level`, in loop order.
    pub fn active_loops(&self, level: usize) -> impl Iterator<Item = usize> + '_ {
        self.permutations[level].iter().copied().filter(move |&d| self.temporal[level][d] > 1)
    }

    pub fn to_doc(&self, w: &LayerWorkload, a: &AcceleratorConfig) -> MappingDoc {
        let name = |d: usize| w.dim_name(d).to_string();
        MappingDoc {
            tilings: self
                .temporal
                .iter()
                .zip(&self.permutations)
                .enumerate()
                .map(|(l, (f, p))| LevelTiling {
                    level: a.memory_levels[l].name.clone(),
                    factors: f.iter().enumerate().map(|(d, &x)| (name(d), x)).collect(),
                    permutation: p.iter().map(|&d| name(d)).collect(),
                })
                .collect(),
            spatials: self
                .spatial
                .iter()
                .enumerate()
                .map(|(c, f)| SpatialAssignment {
                    compute_level: a.compute_levels[c].name.clone(),
                    factors: f.iter().enumerate().map(|(d, &x)| (name(d), x)).collect(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &MappingDoc, w: &LayerWorkload, a: &AcceleratorConfig) -> Result<Mapping> {
        let d = w.num_dims();
        let dim = |n: &str| w.dim_index(n).ok_or_else(|| Error::Structural(format!("unknown dimension {n}")));
        let factors = |map: &BTreeMap<String, u64>, owner: &str| -> Result<Vec<u64>> {
            let mut out = vec![0u64; d];
            for (n, &f) in map {
                out[dim(n)?] = f;
            }
            if let Some(missing) = out.iter().position(|&f| f == 0) {
                return Err(Error::Structural(format!("{owner}: no positive factor for {}", w.dim_name(missing))));
            }
            Ok(out)
        };
        if doc.tilings.len() != a.num_memory_levels() {
            return Err(Error::Structural(format!(
                "{} tilings for {} memory levels",
                doc.tilings.len(),
                a.num_memory_levels()
            )));
        }
        if doc.spatials.len() != a.num_compute_levels() {
            return Err(Error::Structural(format!(
                "{} spatial assignments for {} compute levels",
                doc.spatials.len(),
                a.num_compute_levels()
            )));
        }
        let mut temporal = vec![Vec::new(); a.num_memory_levels()];
        let mut permutations = vec![Vec::new(); a.num_memory_levels()];
        for t in &doc.tilings {
            let l = a.memory_index(&t.level).ok_or_else(|| Error::Structural(format!("unknown level {}", t.level)))?;
            if !temporal[l].is_empty() {
                return Err(Error::Structural(format!("level {} tiled twice", t.level)));
            }
            temporal[l] = factors(&t.factors, &t.level)?;
            permutations[l] = t.permutation.iter().map(|n| dim(n)).collect::<Result<_>>()?;
        }
        let mut spatial = vec![Vec::new(); a.num_compute_levels()];
        for s in &doc.spatials {
            let c = a
                .compute_index(&s.compute_level)
                .ok_or_else(|| Error::Structural(format!("unknown compute level {}", s.compute_level)))?;
            if !spatial[c].is_empty() {
                return Err(Error::Structural(format!("compute level {} assigned twice", s.compute_level)));
            }
            spatial[c] = factors(&s.factors, &s.compute_level)?;
        }
        let m = Mapping { temporal, permutations, spatial };
        check_structure(&m, w, a)?;
        Ok(m)
    }
}

/// Named, serializable form of a [`Mapping`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingDoc {
    pub tilings: Vec<LevelTiling>,
    pub spatials: Vec<SpatialAssignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelTiling {
    pub level: String,
    pub factors: BTreeMap<String, u64>,
    pub permutation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialAssignment {
    pub compute_level: String,
    pub factors: BTreeMap<String, u64>,
}

/// Arity, permutation and positivity checks. Failing these means the value
/// is not a mapping for `(w, a)` at all, as opposed to an illegal one.
pub fn check_structure(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Result<()> {
    let d = w.num_dims();
    if m.temporal.len() != a.num_memory_levels() || m.permutations.len() != a.num_memory_levels() {
        return Err(Error::Structural("memory level count mismatch".into()));
    }
    if m.spatial.len() != a.num_compute_levels() {
        return Err(Error::Structural("compute level count mismatch".into()));
    }
    for (l, (f, p)) in m.temporal.iter().zip(&m.permutations).enumerate() {
        let level = &a.memory_levels[l].name;
        if f.len() != d {
            return Err(Error::Structural(format!("level {level}: {} factors for {d} dims", f.len())));
        }
        if f.contains(&0) {
            return Err(Error::Structural(format!("level {level}: zero factor")));
        }
        let mut seen = vec![false; d];
        for &x in p {
            if x >= d || std::mem::replace(&mut seen[x], true) {
                return Err(Error::Structural(format!("level {level}: permutation is not a permutation of the dims")));
            }
        }
        if p.len() != d {
            return Err(Error::Structural(format!("level {level}: permutation misses dims")));
        }
    }
    for (c, f) in m.spatial.iter().enumerate() {
        if f.len() != d || f.contains(&0) {
            return Err(Error::Structural(format!("compute level {}: bad factors", a.compute_levels[c].name)));
        }
    }
    Ok(())
}

pub fn is_legal(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Result<Verdict> {
    check_structure(m, w, a)?;
    let mut violations = Vec::new();
    for dim in 0..w.num_dims() {
        let product: u128 = (0..m.num_positions()).map(|p| m.factor(p, dim) as u128).product();
        if product != w.extent(dim) as u128 {
            violations.push(Violation::Factorization {
                dim: w.dim_name(dim).to_string(),
                product,
                extent: w.extent(dim),
            });
        }
    }
    for (c, level) in a.compute_levels.iter().enumerate() {
        let used: u128 = m.spatial[c].iter().map(|&f| f as u128).product();
        if used > level.units as u128 {
            violations.push(Violation::Units { compute_level: level.name.clone(), used, units: level.units });
        }
    }
    // footprints are only meaningful once the factorization is right
    if violations.is_empty() {
        violations.extend(capacity_violations(m, w, a));
    }
    Ok(if violations.is_empty() { Verdict::Legal } else { Verdict::Illegal(violations) })
}

pub(crate) fn capacity_violations(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    for (l, level) in a.memory_levels.iter().enumerate() {
        let Some(capacity) = level.capacity_words else { continue };
        let used = level_footprint(m, w, a, l);
        if used > capacity as u128 {
            out.push(Violation::Capacity { level: level.name.clone(), footprint: used, capacity });
        }
    }
    out
}

pub(crate) fn level_footprint(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig, level: usize) -> u128 {
    let cum = m.cumulative(a, level);
    TensorRole::ALL.iter().map(|&t| cost::footprint_of(&cum, w.shape(t))).sum()
}

/// Legality check for mappings produced internally, where structure is
/// guaranteed.
pub(crate) fn fits(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> bool {
    units_ok(m, a) && capacity_violations(m, w, a).is_empty()
}

pub(crate) fn units_ok(m: &Mapping, a: &AcceleratorConfig) -> bool {
    a.compute_levels
        .iter()
        .zip(&m.spatial)
        .all(|(c, f)| f.iter().map(|&x| x as u128).product::<u128>() <= c.units as u128)
}

/// Rewrite to the canonical representative: the innermost level's loop
/// order becomes the reference order, and at every level loops with a
/// factor of one move to the innermost positions in reference order.
pub fn canonicalize(m: &Mapping) -> Mapping {
    let mut out = m.clone();
    let inner = m.num_levels() - 1;
    let d = m.num_dims();
    for (l, perm) in out.permutations.iter_mut().enumerate() {
        if l == inner {
            *perm = (0..d).collect();
            continue;
        }
        let mut next: Vec<usize> = m.active_loops(l).collect();
        next.extend((0..d).filter(|&x| m.temporal[l][x] == 1));
        *perm = next;
    }
    out
}

/// Draw a mapping by sampling each axis independently, rejecting samples
/// that overflow a buffer.
pub fn random_mapping<R: Rng + ?Sized>(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Mapping> {
    for _ in 0..max_attempts.max(1) {
        let m = sample_unconstrained(w, a, rng);
        if capacity_violations(&m, w, a).is_empty() {
            return Ok(m);
        }
    }
    Err(Error::NoLegalSample { attempts: max_attempts.max(1) })
}

/// One draw before the capacity check. Each dim's factors are a uniform
/// ordered factorization over all temporal and spatial positions; each
/// compute level then keeps the spatial factors of a uniform subset of dims,
/// trimmed prime by prime (dims in random order) to its unit count. Factors
/// dropped from a compute level join the temporal factor of the level it
/// hangs beneath.
pub fn sample_unconstrained<R: Rng + ?Sized>(w: &LayerWorkload, a: &AcceleratorConfig, rng: &mut R) -> Mapping {
    let d = w.num_dims();
    let levels = a.num_memory_levels();
    let positions = levels + a.num_compute_levels();
    let mut m = Mapping::trivial(w, a);
    for dim in 0..d {
        m.set_dim_factors(dim, &sample_composition(w.extent(dim), positions, rng));
    }
    for (c, level) in a.compute_levels.iter().enumerate() {
        let home = a.attach(c);
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let mut used = 1u64;
        for dim in order {
            let sampled = std::mem::replace(&mut m.spatial[c][dim], 1);
            if !rng.gen_bool(0.5) {
                m.temporal[home][dim] *= sampled;
                continue;
            }
            let mut primes = prime_list(sampled);
            primes.shuffle(rng);
            for p in primes {
                if used * p <= level.units {
                    used *= p;
                    m.spatial[c][dim] *= p;
                } else {
                    m.temporal[home][dim] *= p;
                }
            }
        }
    }
    for perm in m.permutations.iter_mut() {
        perm.shuffle(rng);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MapSpaceSize {
    #[serde(serialize_with = "crate::serde_util::biguint")]
    pub tile_count: BigUint,
    #[serde(serialize_with = "crate::serde_util::biguint")]
    pub order_count: BigUint,
    #[serde(serialize_with = "crate::serde_util::biguint")]
    pub parallel_count: BigUint,
    #[serde(serialize_with = "crate::serde_util::biguint")]
    pub total: BigUint,
}

/// Raw size of the representation, counting capacity-illegal points.
pub fn map_space_size(w: &LayerWorkload, a: &AcceleratorConfig) -> MapSpaceSize {
    let d = w.num_dims() as u64;
    let levels = a.num_memory_levels();
    let positions = levels + a.num_compute_levels();
    let tile_count: BigUint = w.dims().iter().map(|x| composition_count(x.extent, positions)).product();
    let d_factorial: BigUint = (1..=d).map(BigUint::from).product();
    let order_count = d_factorial.pow(levels as u32);
    let parallel_count = BigUint::from(1u32) << (d as usize * a.num_compute_levels());
    let total = &tile_count * &order_count * &parallel_count;
    MapSpaceSize { tile_count, order_count, parallel_count, total }
}
