//! Mappers: random sampling, pruned random sampling, the exhaustive oracle
//! and a genetic mapper with axis-specific variation operators.
//!
//! All mappers share one [`Evaluator`], which owns the sample budget, the
//! evaluation cache (keyed by canonical form) and the trace. Batches are
//! evaluated through [`crate::exec`], then merged in submission order, so a
//! search produces the same trace whether it runs on one thread or many.

mod exhaustive;
mod ga;
pub mod operators;

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::AcceleratorConfig;
use crate::cost::{self, CostReport, DensityContext};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::mapping::{self, canonicalize, Mapping};
use crate::workload::LayerWorkload;

pub use exhaustive::{canonical_space_size, exhaustive_search, ExhaustiveResult, DEFAULT_ORACLE_CAP};
pub use ga::{ga_search, ga_search_with, GaConfig, OpRates, Operator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Cost-model evaluations.
    pub max_samples: u64,
    pub max_wall_seconds: Option<f64>,
}

impl SearchBudget {
    pub fn samples(n: u64) -> Self {
        SearchBudget { max_samples: n, max_wall_seconds: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_samples == 0 {
            return Err(Error::InvalidConfig("sample budget must be positive".into()));
        }
        if let Some(s) = self.max_wall_seconds {
            if s.is_nan() || s <= 0.0 {
                return Err(Error::InvalidConfig("wall-clock budget must be positive".into()));
            }
        }
        Ok(())
    }
}

/// What a search minimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Energy and latency at one density point; EDP breaks ties.
    Edp(DensityContext),
    /// Weighted sum of EDPs over several density points. Each candidate
    /// costs one evaluation per point.
    Weighted(Vec<(DensityContext, f64)>),
}

impl Objective {
    pub fn cost_units(&self) -> u64 {
        match self {
            Objective::Edp(_) => 1,
            Objective::Weighted(points) => points.len() as u64,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Objective::Edp(ctx) => ctx.validate(),
            Objective::Weighted(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidConfig("weighted objective needs at least one point".into()));
                }
                for (ctx, weight) in points {
                    ctx.validate()?;
                    if !(*weight > 0.0 && weight.is_finite()) {
                        return Err(Error::InvalidConfig(format!("weight {weight} must be positive")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluate a legal mapping.
    pub fn fitness(&self, m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> Fitness {
        match self {
            Objective::Edp(ctx) => {
                let report = cost::evaluate_unchecked(m, w, a, ctx);
                Fitness {
                    score: report.edp,
                    objectives: vec![report.energy_uj, report.latency_cycles as f64],
                    level_edps: Vec::new(),
                    report,
                }
            }
            Objective::Weighted(points) => {
                let mut score = 0.0;
                let mut objectives = Vec::with_capacity(points.len() * 2);
                let mut level_edps = Vec::with_capacity(points.len());
                let mut first = None;
                for (ctx, weight) in points {
                    let r = cost::evaluate_unchecked(m, w, a, ctx);
                    score += weight * r.edp;
                    objectives.push(r.energy_uj);
                    objectives.push(r.latency_cycles as f64);
                    level_edps.push(r.edp);
                    first.get_or_insert(r);
                }
                Fitness { score, objectives, level_edps, report: first.expect("non-empty") }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fitness {
    /// Lower is better: EDP, or the weighted EDP sum.
    pub score: f64,
    /// Minimized jointly by non-dominated sorting.
    pub objectives: Vec<f64>,
    /// Per-point EDPs for weighted objectives.
    pub level_edps: Vec<f64>,
    /// Report at the (first) density point.
    pub report: CostReport,
}

impl Fitness {
    pub fn dominates(&self, other: &Fitness) -> bool {
        let mut strictly = false;
        for (a, b) in self.objectives.iter().zip(&other.objectives) {
            if a > b {
                return false;
            }
            if a < b {
                strictly = true;
            }
        }
        strictly
    }
}

/// Total order used for every "best" decision: score, then energy, then
/// the canonical mapping itself.
pub(crate) fn better(a: (&Fitness, &Mapping), b: (&Fitness, &Mapping)) -> std::cmp::Ordering {
    a.0.score
        .total_cmp(&b.0.score)
        .then(a.0.report.energy_uj.total_cmp(&b.0.report.energy_uj))
        .then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub sample_index: u64,
    pub wall_ms: f64,
    pub mapping_id: String,
    pub score: f64,
    pub best_score: f64,
    pub report: CostReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub level_edps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best score seen up to and including this generation.
    pub best: f64,
    pub median: f64,
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub records: Vec<TraceRecord>,
    pub generations: Vec<GenerationStats>,
    pub best: Option<(Mapping, Fitness)>,
    /// Budget units consumed (evaluations × points per evaluation).
    pub samples_used: u64,
    pub draws: u64,
    pub cache_hits: u64,
}

impl SearchTrace {
    pub fn best_score(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |(_, f)| f.score)
    }

    pub fn best_mapping(&self) -> Option<&Mapping> {
        self.best.as_ref().map(|(m, _)| m)
    }

    pub fn best_report(&self) -> Option<&CostReport> {
        self.best.as_ref().map(|(_, f)| &f.report)
    }

    /// Trace as CSV: one row per cost-model evaluation.
    pub fn to_csv(&self, omit_timing: bool) -> String {
        let mut out = String::from("sample_index,wall_ms,edp,energy_uj,latency_cycles,best_edp");
        let points = self.records.first().map_or(0, |r| r.level_edps.len());
        for i in 0..points {
            out.push_str(&format!(",edp_point_{i}"));
        }
        out.push('\n');
        for r in &self.records {
            let wall = if omit_timing { 0.0 } else { r.wall_ms };
            out.push_str(&format!(
                "{},{:.3},{:e},{:e},{},{:e}",
                r.sample_index, wall, r.score, r.report.energy_uj, r.report.latency_cycles, r.best_score
            ));
            for e in &r.level_edps {
                out.push_str(&format!(",{e:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Stable short id of a mapping's canonical form.
pub fn mapping_id(m: &Mapping) -> String {
    let c = canonicalize(m);
    let text = format!("{:?}|{:?}|{:?}", c.temporal, c.permutations, c.spatial);
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Budget accounting, canonical-form cache and trace recording.
pub struct Evaluator<'a> {
    w: &'a LayerWorkload,
    a: &'a AcceleratorConfig,
    objective: Objective,
    budget: SearchBudget,
    exec: ExecMode,
    cache: HashMap<Mapping, Fitness>,
    trace: SearchTrace,
    start: Instant,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        w: &'a LayerWorkload,
        a: &'a AcceleratorConfig,
        objective: Objective,
        budget: SearchBudget,
        exec: ExecMode,
    ) -> Result<Self> {
        budget.validate()?;
        objective.validate()?;
        Ok(Evaluator {
            w,
            a,
            objective,
            budget,
            exec,
            cache: HashMap::new(),
            trace: SearchTrace {
                records: Vec::new(),
                generations: Vec::new(),
                best: None,
                samples_used: 0,
                draws: 0,
                cache_hits: 0,
            },
            start: Instant::now(),
        })
    }

    pub fn workload(&self) -> &'a LayerWorkload {
        self.w
    }

    pub fn arch(&self) -> &'a AcceleratorConfig {
        self.a
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    fn remaining_evaluations(&self) -> u64 {
        (self.budget.max_samples - self.trace.samples_used) / self.objective.cost_units()
    }

    pub fn exhausted(&self) -> bool {
        if self.remaining_evaluations() == 0 {
            return true;
        }
        match self.budget.max_wall_seconds {
            Some(limit) => self.start.elapsed().as_secs_f64() >= limit,
            None => false,
        }
    }

    pub fn best_score(&self) -> f64 {
        self.trace.best_score()
    }

    /// Evaluate a batch with caching. Returns fitness per input, `None`
    /// where the budget ran out before the mapping could be evaluated.
    pub fn evaluate_cached(&mut self, batch: &[Mapping]) -> Vec<Option<Fitness>> {
        let keys: Vec<Mapping> = batch.iter().map(canonicalize).collect();
        let mut pending: Vec<Mapping> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for k in &keys {
            if !self.cache.contains_key(k) && seen.insert(k.clone()) {
                pending.push(k.clone());
            }
        }
        let allowed = if self.exhausted() { 0 } else { self.remaining_evaluations() as usize };
        pending.truncate(allowed);
        self.trace.draws += batch.len() as u64;
        let fresh = self.run(&pending);
        self.trace.cache_hits += (batch.len() - pending.len()) as u64;
        for (m, f) in pending.into_iter().zip(fresh) {
            self.record(&m, &f);
            self.cache.insert(m, f);
        }
        keys.iter().map(|k| self.cache.get(k).cloned()).collect()
    }

    /// Evaluate every mapping of the batch, duplicates included, as long as
    /// the budget lasts. Used by the naive random mapper.
    pub fn evaluate_uncached(&mut self, batch: &[Mapping]) -> Vec<Option<Fitness>> {
        let allowed = if self.exhausted() { 0 } else { self.remaining_evaluations() as usize };
        let take = batch.len().min(allowed);
        self.trace.draws += batch.len() as u64;
        let fresh = self.run(&batch[..take]);
        let mut out: Vec<Option<Fitness>> = Vec::with_capacity(batch.len());
        for (m, f) in batch[..take].iter().zip(fresh) {
            self.record(m, &f);
            out.push(Some(f));
        }
        out.resize(batch.len(), None);
        out
    }

    fn run(&self, batch: &[Mapping]) -> Vec<Fitness> {
        let (w, a, obj) = (self.w, self.a, &self.objective);
        exec::map(self.exec, batch, |m| obj.fitness(m, w, a))
    }

    fn record(&mut self, m: &Mapping, f: &Fitness) {
        let improved = match &self.trace.best {
            None => true,
            Some((bm, bf)) => better((f, m), (bf, bm)).is_lt(),
        };
        if improved {
            self.trace.best = Some((canonicalize(m), f.clone()));
        }
        self.trace.records.push(TraceRecord {
            sample_index: self.trace.records.len() as u64,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            mapping_id: mapping_id(m),
            score: f.score,
            best_score: self.trace.best_score(),
            report: f.report.clone(),
            level_edps: f.level_edps.clone(),
        });
        self.trace.samples_used += self.objective.cost_units();
    }

    pub fn push_generation(&mut self, generation: usize, population: &[f64]) {
        let mut sorted = population.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = if sorted.is_empty() { f64::NAN } else { sorted[sorted.len() / 2] };
        self.trace.generations.push(GenerationStats {
            generation,
            best: self.trace.best_score(),
            median,
            evaluations: self.trace.records.len() as u64,
        });
    }

    pub fn finish(self) -> SearchTrace {
        self.trace
    }
}

const RANDOM_BATCH: usize = 64;

/// Independent random draws; every draw is evaluated and costs budget,
/// duplicates included.
pub fn random_search(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    ctx: &DensityContext,
    budget: SearchBudget,
    seed: u64,
    exec: ExecMode,
) -> Result<SearchTrace> {
    let mut ev = Evaluator::new(w, a, Objective::Edp(*ctx), budget, exec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while !ev.exhausted() {
        let n = (ev.remaining_evaluations() as usize).min(RANDOM_BATCH);
        let batch = (0..n)
            .map(|_| mapping::random_mapping(w, a, &mut rng, mapping::DEFAULT_SAMPLE_RETRIES))
            .collect::<Result<Vec<_>>>()?;
        ev.evaluate_uncached(&batch);
    }
    Ok(ev.finish())
}

/// Random sampling over canonical forms: draws that collide with an
/// already-evaluated canonical mapping are free.
pub fn pruned_random_search(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    ctx: &DensityContext,
    budget: SearchBudget,
    seed: u64,
    exec: ExecMode,
) -> Result<SearchTrace> {
    let mut ev = Evaluator::new(w, a, Objective::Edp(*ctx), budget, exec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_limit = budget.max_samples.saturating_mul(50).max(10_000);
    while !ev.exhausted() && ev.trace.draws < draw_limit {
        let n = (ev.remaining_evaluations() as usize).min(RANDOM_BATCH);
        let batch = (0..n)
            .map(|_| mapping::random_mapping(w, a, &mut rng, mapping::DEFAULT_SAMPLE_RETRIES))
            .collect::<Result<Vec<_>>>()?;
        ev.evaluate_cached(&batch);
    }
    Ok(ev.finish())
}

/// First generation whose best score closes 99.5% of the gap between the
/// initial generation's best and the final best.
pub fn convergence_generation(trace: &SearchTrace) -> Option<usize> {
    convergence_index(&trace.generations.iter().map(|g| g.best).collect::<Vec<_>>())
}

pub fn convergence_index(best_per_generation: &[f64]) -> Option<usize> {
    let initial = *best_per_generation.first()?;
    let last = *best_per_generation.last()?;
    let final_best = best_per_generation.iter().copied().fold(last, f64::min);
    let threshold = final_best + 0.005 * (initial - final_best);
    best_per_generation.iter().position(|&b| b <= threshold)
}
