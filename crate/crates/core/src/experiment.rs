//! Experiment drivers behind the command-line harness: per-layer searches
//! over a network, loop-order sweeps, density-transfer tables and map-space
//! reports. Each returns plain data plus helpers to write it out; nothing
//! here touches ambient randomness.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::AcceleratorConfig;
use crate::cost::{evaluate, CostReport, DensityContext};
use crate::error::{Error, Result};
use crate::factor::permutations;
use crate::heuristics::{
    default_seed_count, sparsity_aware_search, warm_start_init, DensitySweep, ReplayBuffer, SeedPolicy,
};
use crate::mapping::{self, map_space_size, MapSpaceSize, Mapping, MappingDoc};
use crate::search::{
    self, canonical_space_size, convergence_generation, exhaustive_search, ga_search, SearchBudget, SearchTrace,
    DEFAULT_ORACLE_CAP,
};
use crate::workload::LayerWorkload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapperKind {
    Random,
    Pruned,
    Ga,
    Exhaustive,
}

impl std::str::FromStr for MapperKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MapperKind::Random),
            "pruned" => Ok(MapperKind::Pruned),
            "ga" => Ok(MapperKind::Ga),
            "exhaustive" => Ok(MapperKind::Exhaustive),
            _ => Err(Error::InvalidConfig(format!("unknown mapper {s:?}"))),
        }
    }
}

/// Everything a network search needs besides the inputs themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    pub mapper: MapperKind,
    pub budget: SearchBudget,
    /// Base GA settings; the seed is overridden per run.
    pub ga: crate::search::GaConfig,
    pub seeds: Vec<u64>,
    /// `None` runs every layer cold.
    pub warm_start: Option<SeedPolicy>,
    /// Warm-start seeds per layer; defaults to a quarter of the population.
    pub seed_count: Option<usize>,
    /// Score each mapping across this sweep instead of at the layer's own density.
    pub sparsity_aware: Option<DensitySweep>,
    pub oracle_cap: u64,
}

impl SearchSpec {
    pub fn new(mapper: MapperKind, budget: SearchBudget, seeds: Vec<u64>) -> Self {
        SearchSpec {
            mapper,
            budget,
            ga: Default::default(),
            seeds,
            warm_start: None,
            seed_count: None,
            sparsity_aware: None,
            oracle_cap: DEFAULT_ORACLE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        self.budget.validate()?;
        self.ga.validate()?;
        let genetic = self.mapper == MapperKind::Ga;
        if self.warm_start.is_some() && !genetic {
            return Err(Error::InvalidConfig("warm start needs the ga mapper".into()));
        }
        if self.sparsity_aware.is_some() && !genetic {
            return Err(Error::InvalidConfig("sparsity-aware scoring needs the ga mapper".into()));
        }
        if let Some(sweep) = &self.sparsity_aware {
            sweep.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerOutcome {
    pub layer: String,
    pub seed: u64,
    pub best_edp: f64,
    /// Mapper objective: EDP, or the weighted sweep score.
    pub best_score: f64,
    pub samples_used: u64,
    pub generations: usize,
    pub convergence_generation: Option<usize>,
    /// EDP of the warm-start seed before any search, when one was used.
    pub warm_seed_edp: Option<f64>,
    pub mapping: MappingDoc,
    pub report: CostReport,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcomes: Vec<LayerOutcome>,
    /// Per-layer traces; empty for the exhaustive mapper.
    pub traces: Vec<SearchTrace>,
    pub buffer: ReplayBuffer,
}

#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub runs: Vec<SeedRun>,
}

/// Search every layer in order for every seed. Each seed starts from
/// `initial` (or an empty buffer) and records its results as it goes.
pub fn run_network(
    workloads: &[LayerWorkload],
    a: &AcceleratorConfig,
    spec: &SearchSpec,
    initial: Option<&ReplayBuffer>,
) -> Result<NetworkRun> {
    spec.validate()?;
    if let Some(buf) = initial {
        buf.check_scope(a)?;
    }
    let mut runs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let mut buffer = initial.cloned().unwrap_or_else(|| ReplayBuffer::new(a));
        let mut outcomes = Vec::with_capacity(workloads.len());
        let mut traces = Vec::with_capacity(workloads.len());
        for w in workloads {
            let (outcome, trace) = run_layer(w, a, spec, seed, &buffer)?;
            let m = Mapping::from_doc(&outcome.mapping, w, a)?;
            buffer.record_result(w, a, &m, &outcome.report)?;
            outcomes.push(outcome);
            traces.extend(trace);
        }
        runs.push(SeedRun { seed, outcomes, traces, buffer });
    }
    Ok(NetworkRun { runs })
}

fn run_layer(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    spec: &SearchSpec,
    seed: u64,
    buffer: &ReplayBuffer,
) -> Result<(LayerOutcome, Option<SearchTrace>)> {
    let ctx = DensityContext::for_workload(w);
    let outcome = |best: &Mapping, report: CostReport, score: f64, trace: Option<&SearchTrace>, warm: Option<f64>| {
        LayerOutcome {
            layer: w.id().to_string(),
            seed,
            best_edp: report.edp,
            best_score: score,
            samples_used: trace.map_or(0, |t| t.samples_used),
            generations: trace.map_or(0, |t| t.generations.len().saturating_sub(1)),
            convergence_generation: trace.and_then(convergence_generation),
            warm_seed_edp: warm,
            mapping: best.to_doc(w, a),
            report,
        }
    };
    if spec.mapper == MapperKind::Exhaustive {
        let r = exhaustive_search(w, a, &ctx, spec.oracle_cap, spec.ga.exec)?;
        let samples = r.evaluated;
        let mut o = outcome(&r.mapping, r.report.clone(), r.report.edp, None, None);
        o.samples_used = samples;
        return Ok((o, None));
    }
    let cfg = spec.ga.clone().with_seed(seed);
    let mut init = Vec::new();
    let mut warm = None;
    if let Some(policy) = spec.warm_start {
        let k = spec.seed_count.unwrap_or_else(|| default_seed_count(cfg.population_size));
        init = warm_start_init(w, a, buffer, k, policy)?;
        if let Some(first) = init.first() {
            warm = Some(evaluate(first, w, a, &ctx)?.edp);
        }
    }
    let trace = match (spec.mapper, &spec.sparsity_aware) {
        (MapperKind::Random, _) => search::random_search(w, a, &ctx, spec.budget, seed, cfg.exec)?,
        (MapperKind::Pruned, _) => search::pruned_random_search(w, a, &ctx, spec.budget, seed, cfg.exec)?,
        (MapperKind::Ga, None) => ga_search(w, a, &ctx, spec.budget, &cfg, &init)?,
        (MapperKind::Ga, Some(sweep)) => sparsity_aware_search(w, a, spec.budget, &cfg, sweep, &init)?,
        (MapperKind::Exhaustive, _) => unreachable!("handled above"),
    };
    let (best, fitness) = trace.best.clone().ok_or_else(|| Error::InvalidConfig("budget too small to evaluate any mapping".into()))?;
    // the stored report is always at the layer's own density
    let report = evaluate(&best, w, a, &ctx)?;
    let o = outcome(&best, report, fitness.score, Some(&trace), warm);
    Ok((o, Some(trace)))
}

#[derive(Serialize)]
struct Summary<'a> {
    arch: &'a str,
    arch_fingerprint: String,
    mapper: MapperKind,
    budget: SearchBudget,
    warm_start: Option<&'static str>,
    sparsity_aware: Option<&'a DensitySweep>,
    seeds: Vec<u64>,
    layers: Vec<&'a LayerOutcome>,
}

/// File-system-safe version of a layer id.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `summary.json` plus, per seed, one trace CSV per layer and the
/// final replay buffer.
pub fn write_network_run(
    out: &Path,
    run: &NetworkRun,
    a: &AcceleratorConfig,
    spec: &SearchSpec,
    omit_timing: bool,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in &run.runs {
        let dir = out.join(format!("seed-{}", r.seed));
        for (o, t) in r.outcomes.iter().zip(&r.traces) {
            let p = dir.join(format!("{}.csv", file_stem(&o.layer)));
            write(&p, &t.to_csv(omit_timing))?;
            written.push(p);
        }
        let p = dir.join("replay.json");
        r.buffer.save_to(&p, a)?;
        written.push(p);
    }
    let summary = Summary {
        arch: &a.name,
        arch_fingerprint: a.fingerprint(),
        mapper: spec.mapper,
        budget: spec.budget,
        warm_start: spec.warm_start.map(|p| match p {
            SeedPolicy::Similarity => "similarity",
            SeedPolicy::PreviousLayer => "previous-layer",
        }),
        sparsity_aware: spec.sparsity_aware.as_ref(),
        seeds: spec.seeds.clone(),
        layers: run.runs.iter().flat_map(|r| &r.outcomes).collect(),
    };
    let p = out.join("summary.json");
    write(&p, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    written.push(p);
    Ok(written)
}

impl ReplayBuffer {
    fn save_to(&self, path: &Path, a: &AcceleratorConfig) -> Result<()> {
        write(path, &self.to_json(a)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderBucket {
    pub edp: f64,
    pub count: usize,
    /// Loop order with the positions on which the bucket disagrees shown
    /// as `.`, outermost first.
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSweep {
    pub dim_names: Vec<String>,
    pub rows: Vec<(Vec<usize>, CostReport)>,
    /// Ascending EDP.
    pub buckets: Vec<OrderBucket>,
}

impl OrderSweep {
    pub fn distinct_edps(&self) -> usize {
        self.buckets.len()
    }

    fn order_string(&self, perm: &[usize]) -> String {
        perm.iter().map(|&d| self.dim_names[d].as_str()).collect::<Vec<_>>().join("")
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("permutation,edp,energy_uj,latency_cycles\n");
        for (p, r) in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{}\n", self.order_string(p), r.edp, r.energy_uj, r.latency_cycles));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("edp,count,pattern\n");
        for b in &self.buckets {
            out.push_str(&format!("{:e},{},{}\n", b.edp, b.count, b.pattern));
        }
        out
    }
}

/// Apply every permutation of the dims, identically at every memory level,
/// to the tiling and parallelism of `base`.
pub fn sweep_order(w: &LayerWorkload, a: &AcceleratorConfig, base: &Mapping, ctx: &DensityContext) -> Result<OrderSweep> {
    match mapping::is_legal(base, w, a)? {
        mapping::Verdict::Legal => {}
        mapping::Verdict::Illegal(v) => return Err(Error::Illegal(v)),
    }
    let dims: Vec<usize> = (0..w.num_dims()).collect();
    let mut rows = Vec::new();
    for perm in permutations(&dims) {
        let mut m = base.clone();
        for p in m.permutations.iter_mut() {
            p.clone_from(&perm);
        }
        let report = evaluate(&m, w, a, ctx)?;
        rows.push((perm, report));
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, (_, r)) in rows.iter().enumerate() {
        groups.entry(r.edp.to_bits()).or_default().push(i);
    }
    let names: Vec<String> = (0..w.num_dims()).map(|d| w.dim_name(d).to_string()).collect();
    let mut buckets: Vec<OrderBucket> = groups
        .values()
        .map(|members| {
            let first = &rows[members[0]].0;
            let pattern: String = (0..first.len())
                .map(|k| {
                    if members.iter().all(|&i| rows[i].0[k] == first[k]) {
                        names[first[k]].as_str()
                    } else {
                        "."
                    }
                })
                .collect();
            OrderBucket { edp: rows[members[0]].1.edp, count: members.len(), pattern }
        })
        .collect();
    buckets.sort_by(|x, y| x.edp.total_cmp(&y.edp));
    Ok(OrderSweep { dim_names: names, rows, buckets })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityTransfer {
    pub densities: Vec<f64>,
    /// Best mapping of the specialized search at each density.
    pub specialized: Vec<MappingDoc>,
    /// `matrix[i][j]`: EDP at density `i` of the mapping found for density `j`.
    pub matrix: Vec<Vec<f64>>,
    pub aware: Option<MappingDoc>,
    /// EDP at each density of the sparsity-aware mapping.
    pub aware_row: Vec<f64>,
}

impl DensityTransfer {
    /// Cells whose row diagonal is no worse than the cell itself.
    pub fn diagonal_dominant_cells(&self) -> usize {
        let n = self.densities.len();
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| self.matrix[i][i] <= self.matrix[i][j]).count()
    }

    /// Geometric mean over densities of specialized EDP / sparsity-aware EDP.
    pub fn aware_geomean_ratio(&self) -> Option<f64> {
        if self.aware_row.is_empty() {
            return None;
        }
        let n = self.densities.len() as f64;
        let log_sum: f64 = (0..self.densities.len()).map(|i| (self.matrix[i][i] / self.aware_row[i]).ln()).sum();
        Some((log_sum / n).exp())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("evaluated_at");
        for d in &self.densities {
            out.push_str(&format!(",found_for_{d}"));
        }
        if !self.aware_row.is_empty() {
            out.push_str(",sparsity_aware");
        }
        out.push('\n');
        for (i, d) in self.densities.iter().enumerate() {
            out.push_str(&d.to_string());
            for (j, e) in self.matrix[i].iter().enumerate() {
                let mark = if i == j { "*" } else { "" };
                out.push_str(&format!(",{e:e}{mark}"));
            }
            if let Some(e) = self.aware_row.get(i) {
                out.push_str(&format!(",{e:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Specialized GA searches at each input density, cross-evaluated, plus a
/// sparsity-aware search over the same densities. The sparsity-aware search
/// gets `budget` candidates, i.e. `budget × densities` evaluations.
pub fn density_transfer(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    densities: &[f64],
    budget: SearchBudget,
    seeds: &[u64],
    cfg: &crate::search::GaConfig,
    with_aware: bool,
) -> Result<DensityTransfer> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let sweep = DensitySweep::inverse_weighted(densities.to_vec())?;
    let contexts: Vec<DensityContext> = sweep.contexts(w).into_iter().map(|(c, _)| c).collect();
    let mut specialized = Vec::with_capacity(densities.len());
    for ctx in &contexts {
        let mut best: Option<(f64, Mapping)> = None;
        for &seed in seeds {
            let t = ga_search(w, a, ctx, budget, &cfg.clone().with_seed(seed), &[])?;
            let (m, f) = t.best.expect("positive budget evaluates something");
            if best.as_ref().is_none_or(|(e, bm)| f.score < *e || (f.score == *e && m < *bm)) {
                best = Some((f.score, m));
            }
        }
        specialized.push(best.expect("seeds non-empty").1);
    }
    let matrix = contexts
        .iter()
        .map(|ctx| specialized.iter().map(|m| evaluate(m, w, a, ctx).map(|r| r.edp)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let (aware, aware_row) = if with_aware {
        let scaled = SearchBudget {
            max_samples: budget.max_samples * densities.len() as u64,
            max_wall_seconds: budget.max_wall_seconds,
        };
        let mut best: Option<(f64, Mapping)> = None;
        for &seed in seeds {
            let t = sparsity_aware_search(w, a, scaled, &cfg.clone().with_seed(seed), &sweep, &[])?;
            let (m, f) = t.best.expect("positive budget evaluates something");
            if best.as_ref().is_none_or(|(s, bm)| f.score < *s || (f.score == *s && m < *bm)) {
                best = Some((f.score, m));
            }
        }
        let m = best.expect("seeds non-empty").1;
        let row = contexts.iter().map(|ctx| evaluate(&m, w, a, ctx).map(|r| r.edp)).collect::<Result<Vec<_>>>()?;
        (Some(m.to_doc(w, a)), row)
    } else {
        (None, Vec::new())
    };
    Ok(DensityTransfer {
        densities: densities.to_vec(),
        specialized: specialized.iter().map(|m| m.to_doc(w, a)).collect(),
        matrix,
        aware,
        aware_row,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSpaceReport {
    pub workload: String,
    pub size: MapSpaceSize,
    #[serde(serialize_with = "crate::serde_util::biguint")]
    pub canonical_size: num_bigint::BigUint,
}

/// Sizes of the raw and canonical spaces, and `sample` random legal points
/// as CSV.
pub fn mapspace_report(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    sample: usize,
    seed: u64,
) -> Result<(MapSpaceReport, String)> {
    let report = MapSpaceReport {
        workload: w.id().to_string(),
        size: map_space_size(w, a),
        canonical_size: canonical_space_size(w, a),
    };
    let mut csv = String::from("mapping_hash,energy_uj,latency_cycles,edp\n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = DensityContext::for_workload(w);
    for _ in 0..sample {
        let m = mapping::random_mapping(w, a, &mut rng, mapping::DEFAULT_SAMPLE_RETRIES)?;
        let r = evaluate(&m, w, a, &ctx)?;
        csv.push_str(&format!("{},{:e},{},{:e}\n", search::mapping_id(&m), r.energy_uj, r.latency_cycles, r.edp));
    }
    Ok((report, csv))
}

/// Exit-code class of an error: 2 for bad input, 3 for failures at run time.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() { 2 } else { 3 }
}
