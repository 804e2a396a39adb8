//! Analytical latency/energy model.
//!
//! Every buffer holds one tile per tensor. Between a parent level and a
//! child level, the child's tile of tensor `t` is refetched whenever an
//! enclosing temporal loop relevant to `t` advances. Walking the enclosing
//! loops from the innermost outward, trailing loops irrelevant to `t` are
//! free (the tile stays put); from the first relevant loop outward every
//! trip multiplies the fetch count. Loops with a trip count of one are not
//! loops at all and never matter.
//!
//! Only buffer-to-buffer movement is counted; operand delivery from the
//! innermost buffer to the MACs is folded into the MAC energy. Loop order at
//! the innermost level therefore never matters.
//!
//! Outputs are written back on every eviction and read back whenever a tile
//! that already holds partial sums is brought in again, so an output tile
//! fetched `M` times among `V` distinct tiles costs `(2M - V)` footprints.
//!
//! Child instances fed by the same parent share a fetch when they need the
//! same tile (ideal multicast and spatial reduction).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arch::AcceleratorConfig;
use crate::error::{Error, Result};
use crate::mapping::{self, Mapping};
use crate::workload::{LayerWorkload, TensorRole, TensorShape};

/// Metadata words moved per compressed word when sparse mode is on.
pub const DEFAULT_METADATA_OVERHEAD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityContext {
    pub weight_density: f64,
    pub input_density: f64,
    pub metadata_overhead: f64,
}

impl Default for DensityContext {
    fn default() -> Self {
        Self::dense()
    }
}

impl DensityContext {
    pub fn dense() -> Self {
        DensityContext { weight_density: 1.0, input_density: 1.0, metadata_overhead: 0.0 }
    }

    /// Compressed operands with the default metadata tax.
    pub fn sparse(weight_density: f64, input_density: f64) -> Self {
        DensityContext { weight_density, input_density, metadata_overhead: DEFAULT_METADATA_OVERHEAD }
    }

    /// Dense when the workload declares no sparsity, sparse otherwise.
    pub fn for_workload(w: &LayerWorkload) -> Self {
        let d = w.density();
        if d.weight == 1.0 && d.input == 1.0 {
            Self::dense()
        } else {
            Self::sparse(d.weight, d.input)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(self.weight_density) || !ok(self.input_density) {
            return Err(Error::InvalidConfig(format!(
                "densities must lie in (0, 1], got weight {} input {}",
                self.weight_density, self.input_density
            )));
        }
        if !(self.metadata_overhead >= 0.0 && self.metadata_overhead.is_finite()) {
            return Err(Error::InvalidConfig("metadata overhead must be a non-negative number".into()));
        }
        Ok(())
    }

    /// Multiplier applied to words of `role` moved anywhere in the hierarchy.
    pub fn traffic_scale(&self, role: TensorRole) -> f64 {
        match role {
            TensorRole::Weight => self.weight_density * (1.0 + self.metadata_overhead),
            TensorRole::Input => self.input_density * (1.0 + self.metadata_overhead),
            TensorRole::Output => 1.0,
        }
    }
}

/// Word counts moved at one memory level, per tensor (reads and writes).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorWords {
    #[serde(with = "crate::serde_util::u128_str")]
    pub weight: u128,
    #[serde(with = "crate::serde_util::u128_str")]
    pub input: u128,
    #[serde(with = "crate::serde_util::u128_str")]
    pub output: u128,
}

impl TensorWords {
    pub fn get(&self, role: TensorRole) -> u128 {
        match role {
            TensorRole::Weight => self.weight,
            TensorRole::Input => self.input,
            TensorRole::Output => self.output,
        }
    }

    pub fn get_mut(&mut self, role: TensorRole) -> &mut u128 {
        match role {
            TensorRole::Weight => &mut self.weight,
            TensorRole::Input => &mut self.input,
            TensorRole::Output => &mut self.output,
        }
    }

    pub fn total(&self) -> u128 {
        self.weight + self.input + self.output
    }
}

/// Dense word counts per memory level, outermost level first.
pub type AccessCounts = Vec<TensorWords>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAccesses {
    pub level: String,
    #[serde(flatten)]
    pub words: TensorWords,
    #[serde(with = "crate::serde_util::u128_str")]
    pub cycles: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    #[serde(with = "crate::serde_util::u128_str")]
    pub latency_cycles: u128,
    pub energy_uj: f64,
    pub edp: f64,
    /// Words moved per level after density scaling, rounded up.
    pub accesses: Vec<LevelAccesses>,
    #[serde(with = "crate::serde_util::u128_str")]
    pub compute_cycles: u128,
    pub utilization: f64,
    pub bottleneck: String,
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "latency {} cycles, energy {:.6e} uJ, EDP {:.6e}, utilization {:.3}, bound by {}",
            self.latency_cycles, self.energy_uj, self.edp, self.utilization, self.bottleneck
        )
    }
}

impl CostReport {
    pub fn accesses_at(&self, level: &str) -> Option<&TensorWords> {
        self.accesses.iter().find(|a| a.level == level).map(|a| &a.words)
    }
}

/// Words in one tile given per-dim tile extents.
pub fn footprint_of(cum: &[u64], shape: &TensorShape) -> u128 {
    let plain: u128 = shape.plain.iter().map(|&d| cum[d] as u128).product();
    let halo: u128 = shape.halo.iter().map(|&(p, w)| (cum[p] + cum[w] - 1) as u128).product();
    plain * halo
}

/// Tile size of `role` resident at memory level `level` (per instance).
pub fn footprint(
    m: &Mapping,
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    level: &str,
    role: TensorRole,
) -> Result<u128> {
    mapping::check_structure(m, w, a)?;
    let l = a.memory_index(level).ok_or_else(|| Error::Structural(format!("unknown level {level}")))?;
    Ok(footprint_of(&m.cumulative(a, l), w.shape(role)))
}

/// Dense per-level, per-tensor word counts. Errors on illegal mappings.
pub fn access_counts(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Result<AccessCounts> {
    ensure_legal(m, w, a)?;
    Ok(raw_access_counts(m, w, a))
}

fn ensure_legal(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Result<()> {
    match mapping::is_legal(m, w, a)? {
        mapping::Verdict::Legal => Ok(()),
        mapping::Verdict::Illegal(v) => Err(Error::Illegal(v)),
    }
}

pub(crate) fn raw_access_counts(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> AccessCounts {
    let levels = a.num_memory_levels();
    let dims = w.num_dims();
    let mut counts = vec![TensorWords::default(); levels];

    // enclosing temporal loops, outermost first; extended one level per boundary
    let mut outer: Vec<(usize, u64)> = Vec::with_capacity(levels * dims);
    for child in 1..levels {
        let parent = child - 1;
        outer.extend(m.active_loops(parent).map(|d| (d, m.temporal[parent][d])));

        // spatial fan-out between parent and child
        let mut fanout = vec![1u64; dims];
        for c in 0..a.num_compute_levels() {
            if a.attach(c) == parent {
                for (f, &s) in fanout.iter_mut().zip(&m.spatial[c]) {
                    *f *= s;
                }
            }
        }
        let group: u128 = fanout.iter().map(|&f| f as u128).product();
        let parents = m.instances(a, parent);
        let cum = m.cumulative(a, child);

        for role in TensorRole::ALL {
            let shape = w.shape(role);
            let distinct: u128 = (0..dims)
                .filter(|&d| shape.is_relevant(d))
                .map(|d| fanout[d] as u128)
                .product();
            let fp = footprint_of(&cum, shape);
            let fetches = fetch_count(&outer, shape);
            let (parent_words, child_words) = if role == TensorRole::Output {
                let tiles: u128 = outer
                    .iter()
                    .filter(|&&(d, _)| shape.is_relevant(d))
                    .map(|&(_, f)| f as u128)
                    .product();
                let moves = 2 * fetches - tiles;
                (moves * fp * distinct * parents, moves * fp * group * parents)
            } else {
                (fetches * fp * distinct * parents, fetches * fp * group * parents)
            };
            *counts[parent].get_mut(role) += parent_words;
            *counts[child].get_mut(role) += child_words;
        }
    }
    counts
}

/// Trips of the enclosing loops up to and including the innermost loop
/// relevant to the tensor.
fn fetch_count(outer: &[(usize, u64)], shape: &TensorShape) -> u128 {
    match outer.iter().rposition(|&(d, _)| shape.is_relevant(d)) {
        Some(i) => outer[..=i].iter().map(|&(_, f)| f as u128).product(),
        None => 1,
    }
}

pub fn evaluate(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig, ctx: &DensityContext) -> Result<CostReport> {
    ctx.validate()?;
    ensure_legal(m, w, a)?;
    Ok(evaluate_unchecked(m, w, a, ctx))
}

/// [`evaluate`] for mappings already known to be legal.
pub(crate) fn evaluate_unchecked(
    m: &Mapping,
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    ctx: &DensityContext,
) -> CostReport {
    let counts = raw_access_counts(m, w, a);
    let parallel = m.spatial_parallelism();
    let effective_macs = w.total_macs() as f64 * ctx.weight_density * ctx.input_density;
    let compute_cycles = (effective_macs / parallel as f64).ceil() as u128;

    let mut energy_pj = effective_macs * a.mac_energy_pj;
    let mut latency = compute_cycles;
    let mut bottleneck = "compute".to_string();
    let mut accesses = Vec::with_capacity(counts.len());
    for (l, words) in counts.iter().enumerate() {
        let level = &a.memory_levels[l];
        let mut scaled_total = 0.0;
        let mut scaled = TensorWords::default();
        for role in TensorRole::ALL {
            let s = words.get(role) as f64 * ctx.traffic_scale(role);
            scaled_total += s;
            *scaled.get_mut(role) = s.ceil() as u128;
        }
        energy_pj += scaled_total * level.access_energy_pj;
        let bandwidth = level.bandwidth_words_per_cycle * m.instances(a, l) as f64;
        let cycles = (scaled_total / bandwidth).ceil() as u128;
        if cycles > latency {
            latency = cycles;
            bottleneck = level.name.clone();
        }
        accesses.push(LevelAccesses { level: level.name.clone(), words: scaled, cycles });
    }
    let energy_uj = energy_pj * 1e-6;
    CostReport {
        latency_cycles: latency,
        energy_uj,
        edp: latency as f64 * energy_uj,
        accesses,
        compute_cycles,
        utilization: parallel as f64 / a.total_units() as f64,
        bottleneck,
    }
}

/// `r1` is no worse in both energy and latency and strictly better in one.
pub fn pareto_dominates(r1: &CostReport, r2: &CostReport) -> bool {
    let no_worse = r1.energy_uj <= r2.energy_uj && r1.latency_cycles <= r2.latency_cycles;
    let better = r1.energy_uj < r2.energy_uj || r1.latency_cycles < r2.latency_cycles;
    no_worse && better
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ComputeLevel, MemoryLevel};

    fn arch(pe: u64, alu: u64) -> AcceleratorConfig {
        let mem = |name: &str, cap: Option<u64>, e: f64| MemoryLevel {
            name: name.into(),
            capacity_words: cap,
            access_energy_pj: e,
            bandwidth_words_per_cycle: 16.0,
            instances: pe,
        };
        AcceleratorConfig::new(
            "t",
            1,
            0.5,
            vec![mem("DRAM", None, 200.0), mem("L2", Some(4096), 6.0), mem("L1", Some(64), 1.0)],
            vec![
                ComputeLevel { name: "PE".into(), units: pe, nested_below: "L2".into() },
                ComputeLevel { name: "ALU".into(), units: alu, nested_below: "L1".into() },
            ],
        )
        .unwrap()
    }

    fn report(edp_parts: (u128, f64)) -> CostReport {
        CostReport {
            latency_cycles: edp_parts.0,
            energy_uj: edp_parts.1,
            edp: edp_parts.0 as f64 * edp_parts.1,
            accesses: vec![],
            compute_cycles: 0,
            utilization: 0.0,
            bottleneck: "compute".into(),
        }
    }

    fn resident_gemm() -> (LayerWorkload, AcceleratorConfig, Mapping) {
        let w = LayerWorkload::gemm("g", [2, 2, 2]).unwrap();
        let a = arch(1, 1);
        let mut m = Mapping::trivial(&w, &a);
        m.temporal[0] = vec![1, 1, 1];
        m.temporal[2] = vec![2, 2, 2];
        (w, a, m)
    }

    #[test]
    fn resident_gemm_footprints_and_dram_words() {
        let (w, a, m) = resident_gemm();
        for role in TensorRole::ALL {
            assert_eq!(footprint(&m, &w, &a, "L1", role).unwrap(), 4);
        }
        let r = evaluate(&m, &w, &a, &DensityContext::dense()).unwrap();
        assert_eq!(r.compute_cycles, 8);
        let dram = r.accesses_at("DRAM").unwrap();
        assert_eq!(dram.total(), 12);
        assert_eq!((dram.weight, dram.input, dram.output), (4, 4, 4));
    }

    #[test]
    fn halved_weight_density() {
        let (w, a, m) = resident_gemm();
        let ctx = DensityContext { weight_density: 0.5, input_density: 1.0, metadata_overhead: 0.0 };
        let r = evaluate(&m, &w, &a, &ctx).unwrap();
        assert_eq!(r.compute_cycles, 4);
        assert_eq!(r.accesses_at("DRAM").unwrap().weight, 2);
    }

    #[test]
    fn conv_halo_footprint() {
        let w = LayerWorkload::conv2d("c", [1, 1, 2, 1, 4, 1, 3]).unwrap();
        let a = arch(1, 1);
        let mut m = Mapping::trivial(&w, &a);
        m.temporal[0] = vec![1; 7];
        m.temporal[2] = vec![1, 1, 2, 1, 4, 1, 3];
        assert_eq!(footprint(&m, &w, &a, "L1", TensorRole::Input).unwrap(), 12);
        assert_eq!(footprint(&m, &w, &a, "L1", TensorRole::Weight).unwrap(), 6);
    }

    #[test]
    fn weight_stationary_reuse_across_batch() {
        // the only DRAM loop is over B, which does not index the weights
        let w = LayerWorkload::conv2d("c", [4, 2, 1, 1, 1, 1, 1]).unwrap();
        let a = arch(1, 1);
        let mut m = Mapping::trivial(&w, &a);
        m.temporal[0] = vec![4, 1, 1, 1, 1, 1, 1];
        m.temporal[2] = vec![1, 2, 1, 1, 1, 1, 1];
        m.permutations[0] = vec![1, 2, 3, 4, 5, 6, 0];
        let counts = access_counts(&m, &w, &a).unwrap();
        // L2 weight tile (K=2) is loaded once despite 4 batch iterations
        assert_eq!(counts[0].weight, 2);
        // input depends on B: 4 fetches of a 1-word tile
        assert_eq!(counts[0].input, 4);
    }

    #[test]
    fn fetch_multiplicity_with_all_relevant_outer_loops() {
        let w = LayerWorkload::gemm("g", [2, 3, 2]).unwrap();
        let a = arch(1, 1);
        let mut m = Mapping::trivial(&w, &a);
        m.temporal[0] = vec![1, 3, 2];
        m.temporal[2] = vec![2, 1, 1];
        // weight is indexed by K,N: both DRAM loops relevant, M = 6
        let counts = access_counts(&m, &w, &a).unwrap();
        let fp = footprint(&m, &w, &a, "L2", TensorRole::Weight).unwrap();
        assert_eq!(fp, 1);
        assert_eq!(counts[0].weight, 6);
    }

    #[test]
    fn illegal_mappings_are_rejected() {
        let (w, a, mut m) = resident_gemm();
        m.temporal[2][0] = 4;
        assert!(matches!(evaluate(&m, &w, &a, &DensityContext::dense()), Err(Error::Illegal(_))));
    }

    #[test]
    fn edp_is_product() {
        let (w, a, m) = resident_gemm();
        let r = evaluate(&m, &w, &a, &DensityContext::sparse(0.3, 0.7)).unwrap();
        assert!((r.edp - r.latency_cycles as f64 * r.energy_uj).abs() <= 1e-9 * r.edp);
        let max_level = r.accesses.iter().map(|x| x.cycles).max().unwrap();
        assert_eq!(r.latency_cycles, max_level.max(r.compute_cycles));
    }

    #[test]
    fn dominance() {
        assert!(pareto_dominates(&report((10, 5.0)), &report((20, 6.0))));
        assert!(!pareto_dominates(&report((10, 5.0)), &report((10, 5.0))));
        assert!(!pareto_dominates(&report((10, 6.0)), &report((20, 5.0))));
    }

    #[test]
    fn report_json_uses_decimal_strings() {
        let (w, a, m) = resident_gemm();
        let r = evaluate(&m, &w, &a, &DensityContext::dense()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["compute_cycles"], "8");
        assert_eq!(v["accesses"][0]["weight"], "4");
        let back: CostReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
