//! Search heuristics layered on the mappers: warm-start initialization from
//! a replay buffer of solved layers, and sparsity-aware scoring across a
//! sweep of input densities.

mod replay;
mod sparsity;
mod warm_start;

pub use replay::{ReplayBuffer, ReplayEntry};
pub use sparsity::{sparsity_aware_score, sparsity_aware_search, DensitySweep};
pub use warm_start::{ranked_entries, scale_tiles, seed_mapping, warm_start_init, SeedPolicy};

/// Default number of warm-start seeds for a population.
pub fn default_seed_count(population_size: usize) -> usize {
    (population_size / 4).max(1)
}
