//! Genetic mapper.
//!
//! Generational scheme with elitism: rank by non-dominated sorting over
//! the objective vector (score and energy break ties inside a front), copy
//! the elites, fill the rest with tournament-selected offspring, evaluate
//! the new generation in one batch.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::operators::{mutate_order, mutate_parallelism, mutate_tile, try_crossover};
use super::{better, Evaluator, Fitness, Objective, SearchBudget, SearchTrace};
use crate::arch::AcceleratorConfig;
use crate::cost::DensityContext;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::mapping::{self, Mapping};
use crate::workload::LayerWorkload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    MutateTile,
    MutateOrder,
    MutateParallelism,
    Crossover,
}

impl Operator {
    pub const ALL: [Operator; 4] =
        [Operator::MutateTile, Operator::MutateOrder, Operator::MutateParallelism, Operator::Crossover];

    pub fn name(self) -> &'static str {
        match self {
            Operator::MutateTile => "mutate-tile",
            Operator::MutateOrder => "mutate-order",
            Operator::MutateParallelism => "mutate-parallelism",
            Operator::Crossover => "crossover",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Operator::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown operator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpRates {
    pub mutate_tile: f64,
    pub mutate_order: f64,
    pub mutate_parallelism: f64,
    pub crossover: f64,
}

impl Default for OpRates {
    fn default() -> Self {
        OpRates { mutate_tile: 0.5, mutate_order: 0.3, mutate_parallelism: 0.3, crossover: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub elite_fraction: f64,
    pub rates: OpRates,
    pub enabled_ops: BTreeSet<Operator>,
    pub seed: u64,
    /// Hard cap on generations after the initial one.
    pub max_generations: Option<usize>,
    /// Stop after this many consecutive generations that evaluate nothing new.
    pub stall_generations: usize,
    pub exec: ExecMode,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 100,
            elite_fraction: 0.1,
            rates: OpRates::default(),
            enabled_ops: Operator::ALL.into_iter().collect(),
            seed: 0,
            max_generations: None,
            stall_generations: 20,
            exec: ExecMode::default(),
        }
    }
}

impl GaConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn without(mut self, op: Operator) -> Self {
        self.enabled_ops.remove(&op);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::InvalidConfig("population size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.elite_fraction) {
            return Err(Error::InvalidConfig("elite fraction must lie in [0, 1]".into()));
        }
        let r = &self.rates;
        for (name, v) in [
            ("mutate-tile", r.mutate_tile),
            ("mutate-order", r.mutate_order),
            ("mutate-parallelism", r.mutate_parallelism),
            ("crossover", r.crossover),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} rate {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn elite_count(&self) -> usize {
        ((self.population_size as f64 * self.elite_fraction).ceil() as usize).clamp(1, self.population_size)
    }

    fn enabled(&self, op: Operator) -> bool {
        self.enabled_ops.contains(&op)
    }
}

/// Genetic search minimizing EDP at one density point. `init` seeds the
/// first generation; the remaining slots are filled with random mappings.
pub fn ga_search(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    ctx: &DensityContext,
    budget: SearchBudget,
    cfg: &GaConfig,
    init: &[Mapping],
) -> Result<SearchTrace> {
    ga_search_with(w, a, Objective::Edp(*ctx), budget, cfg, init)
}

pub fn ga_search_with(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    objective: Objective,
    budget: SearchBudget,
    cfg: &GaConfig,
    init: &[Mapping],
) -> Result<SearchTrace> {
    cfg.validate()?;
    let mut ev = Evaluator::new(w, a, objective, budget, cfg.exec)?;
    // initialization and variation draw from separate streams so that runs
    // differing only in operator settings start from the same population
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut seeds = Vec::with_capacity(cfg.population_size);
    for m in init {
        if seeds.len() == cfg.population_size {
            break;
        }
        if mapping::is_legal(m, w, a)?.is_legal() {
            seeds.push(m.clone());
        }
    }
    while seeds.len() < cfg.population_size {
        seeds.push(mapping::random_mapping(w, a, &mut init_rng, mapping::DEFAULT_SAMPLE_RETRIES)?);
    }
    let mut population = evaluated(&mut ev, seeds);
    ev.push_generation(0, &scores(&population));

    let elites = cfg.elite_count();
    let mut stall = 0;
    let mut generation = 0;
    while !ev.exhausted() && !population.is_empty() && stall < cfg.stall_generations {
        if cfg.max_generations.is_some_and(|g| generation >= g) {
            break;
        }
        generation += 1;
        let order = rank(&population);
        let mut position = vec![0usize; population.len()];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let mut children: Vec<Mapping> = order.iter().take(elites).map(|&i| population[i].0.clone()).collect();
        let mut members: HashSet<Mapping> = children.iter().map(mapping::canonicalize).collect();
        while children.len() < cfg.population_size {
            // a child that duplicates a member of this generation is redrawn a few times
            let mut child = offspring(&population, &position, w, a, cfg, &mut rng);
            for _ in 0..DUPLICATE_REDRAWS {
                if !members.contains(&mapping::canonicalize(&child)) {
                    break;
                }
                child = offspring(&population, &position, w, a, cfg, &mut rng);
            }
            members.insert(mapping::canonicalize(&child));
            children.push(child);
        }
        let before = ev.trace.records.len();
        population = evaluated(&mut ev, children);
        stall = if ev.trace.records.len() == before { stall + 1 } else { 0 };
        ev.push_generation(generation, &scores(&population));
    }
    Ok(ev.finish())
}

const DUPLICATE_REDRAWS: usize = 8;

fn offspring<R: Rng + ?Sized>(
    population: &[(Mapping, Fitness)],
    position: &[usize],
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    cfg: &GaConfig,
    rng: &mut R,
) -> Mapping {
    let p1 = tournament(position, rng);
    let mut child = population[p1].0.clone();
    if cfg.enabled(Operator::Crossover) && rng.gen_bool(cfg.rates.crossover) {
        let p2 = tournament(position, rng);
        child = match try_crossover(&population[p1].0, &population[p2].0, w, a, rng) {
            Some(c) => c,
            None if position[p2] < position[p1] => population[p2].0.clone(),
            None => child,
        };
    }
    if cfg.enabled(Operator::MutateTile) && rng.gen_bool(cfg.rates.mutate_tile) {
        child = mutate_tile(&child, w, a, rng);
    }
    if cfg.enabled(Operator::MutateOrder) && rng.gen_bool(cfg.rates.mutate_order) {
        child = mutate_order(&child, rng);
    }
    if cfg.enabled(Operator::MutateParallelism) && rng.gen_bool(cfg.rates.mutate_parallelism) {
        child = mutate_parallelism(&child, w, a, rng);
    }
    child
}

fn evaluated(ev: &mut Evaluator<'_>, batch: Vec<Mapping>) -> Vec<(Mapping, Fitness)> {
    let fitness = ev.evaluate_cached(&batch);
    batch.into_iter().zip(fitness).filter_map(|(m, f)| f.map(|f| (m, f))).collect()
}

fn scores(population: &[(Mapping, Fitness)]) -> Vec<f64> {
    population.iter().map(|(_, f)| f.score).collect()
}

fn tournament<R: Rng + ?Sized>(position: &[usize], rng: &mut R) -> usize {
    let i = rng.gen_range(0..position.len());
    let j = rng.gen_range(0..position.len());
    if position[j] < position[i] { j } else { i }
}

/// Indices ordered best first: Pareto front, then score, energy and
/// canonical mapping.
fn rank(population: &[(Mapping, Fitness)]) -> Vec<usize> {
    let front = pareto_fronts(&population.iter().map(|(_, f)| f).collect::<Vec<_>>());
    let keys: Vec<Mapping> = population.iter().map(|(m, _)| mapping::canonicalize(m)).collect();
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&i, &j| {
        front[i]
            .cmp(&front[j])
            .then_with(|| better((&population[i].1, &keys[i]), (&population[j].1, &keys[j])))
            .then(i.cmp(&j))
    });
    order
}

/// Front index (0 = non-dominated) of every individual.
pub(crate) fn pareto_fronts(fitness: &[&Fitness]) -> Vec<usize> {
    let n = fitness.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && fitness[i].dominates(fitness[j]) {
                dominates[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut front = vec![usize::MAX; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut k = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            front[i] = k;
            for &j in &dominates[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        current = next;
        k += 1;
    }
    front
}
