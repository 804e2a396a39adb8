//! Sparsity-aware scoring: one mapping judged across a sweep of input
//! densities, each point weighted by the inverse of its density.

use serde::{Deserialize, Serialize};

use crate::arch::AcceleratorConfig;
use crate::cost::{evaluate, DensityContext};
use crate::error::{Error, Result};
use crate::mapping::Mapping;
use crate::search::{ga_search_with, GaConfig, Objective, SearchBudget, SearchTrace};
use crate::workload::LayerWorkload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySweep {
    /// Input densities, strictly descending, each in (0, 1].
    pub levels: Vec<f64>,
    /// One positive weight per level.
    pub weights: Vec<f64>,
}

impl Default for DensitySweep {
    fn default() -> Self {
        Self::inverse_weighted(vec![1.0, 0.8, 0.5, 0.2, 0.1]).expect("default sweep is valid")
    }
}

impl DensitySweep {
    /// Weights `1 / density`.
    pub fn inverse_weighted(levels: Vec<f64>) -> Result<Self> {
        let weights = levels.iter().map(|d| 1.0 / d).collect();
        Self::new(levels, weights)
    }

    pub fn new(levels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let sweep = DensitySweep { levels, weights };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("density sweep is empty".into()));
        }
        if self.levels.len() != self.weights.len() {
            return Err(Error::InvalidConfig("one weight per density level".into()));
        }
        if let Some(d) = self.levels.iter().find(|&&d| !(d > 0.0 && d <= 1.0)) {
            return Err(Error::InvalidConfig(format!("density {d} outside (0, 1]")));
        }
        if self.levels.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidConfig("density levels must be strictly descending".into()));
        }
        if let Some(x) = self.weights.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig(format!("weight {x} must be positive")));
        }
        Ok(())
    }

    /// Density contexts for `w`: its declared weight density, the swept
    /// input density, sparse-mode metadata overhead.
    pub fn contexts(&self, w: &LayerWorkload) -> Vec<(DensityContext, f64)> {
        let weight_density = w.density().weight;
        self.levels
            .iter()
            .zip(&self.weights)
            .map(|(&d, &x)| (DensityContext::sparse(weight_density, d), x))
            .collect()
    }

    /// Weighted sum of per-level EDPs.
    pub fn combine(&self, edps: &[f64]) -> f64 {
        edps.iter().zip(&self.weights).map(|(e, x)| e * x).sum()
    }
}

pub fn sparsity_aware_score(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig, sweep: &DensitySweep) -> Result<f64> {
    sweep.validate()?;
    let edps = sweep
        .contexts(w)
        .iter()
        .map(|(ctx, _)| evaluate(m, w, a, ctx).map(|r| r.edp))
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep.combine(&edps))
}

/// Genetic search on the sweep score. Each candidate costs one budget unit
/// per density level.
pub fn sparsity_aware_search(
    w: &LayerWorkload,
    a: &AcceleratorConfig,
    budget: SearchBudget,
    cfg: &GaConfig,
    sweep: &DensitySweep,
    init: &[Mapping],
) -> Result<SearchTrace> {
    sweep.validate()?;
    ga_search_with(w, a, Objective::Weighted(sweep.contexts(w)), budget, cfg, init)
}
