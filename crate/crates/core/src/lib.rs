//! Map-space exploration for spatial DNN accelerators.
//!
//! A layer ([`workload::LayerWorkload`]) is mapped onto an accelerator
//! ([`arch::AcceleratorConfig`]) by choosing loop tilings, loop orders and
//! spatial parallelism ([`mapping::Mapping`]). The analytical model in
//! [`cost`] scores a mapping; [`search`] explores the space and
//! [`heuristics`] adds warm-start and density-sweep extensions.

pub mod arch;
pub mod cost;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod factor;
pub mod heuristics;
pub mod mapping;
pub mod search;
mod serde_util;
pub mod workload;

pub use arch::AcceleratorConfig;
pub use cost::{evaluate, CostReport, DensityContext};
pub use error::{Error, Result};
pub use mapping::Mapping;
pub use workload::LayerWorkload;
