//! Accelerator description: a buffer hierarchy (outermost first) and the
//! spatial compute levels that fan out beneath it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_DRAM_ENERGY_PJ: f64 = 200.0;
pub const DEFAULT_MID_ENERGY_PJ: f64 = 6.0;
pub const DEFAULT_INNER_ENERGY_PJ: f64 = 1.0;
pub const DEFAULT_MAC_ENERGY_PJ: f64 = 0.5;
pub const DEFAULT_DRAM_BANDWIDTH: f64 = 16.0;
pub const DEFAULT_MID_BANDWIDTH: f64 = 64.0;
/// Stand-in for "never the bottleneck".
pub const DEFAULT_INNER_BANDWIDTH: f64 = 1.0e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLevel {
    pub name: String,
    /// `None` for the single unbounded backing store.
    pub capacity_words: Option<u64>,
    pub access_energy_pj: f64,
    /// Words per cycle, per instance.
    pub bandwidth_words_per_cycle: f64,
    pub instances: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeLevel {
    pub name: String,
    pub units: u64,
    /// Memory level whose tile is distributed across these units.
    pub nested_below: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceleratorConfig {
    pub name: String,
    pub bytes_per_word: u32,
    pub mac_energy_pj: f64,
    pub memory_levels: Vec<MemoryLevel>,
    pub compute_levels: Vec<ComputeLevel>,
    #[serde(skip)]
    attach: Vec<usize>,
}

impl AcceleratorConfig {
    pub fn new(
        name: impl Into<String>,
        bytes_per_word: u32,
        mac_energy_pj: f64,
        memory_levels: Vec<MemoryLevel>,
        compute_levels: Vec<ComputeLevel>,
    ) -> Result<Self> {
        let name = name.into();
        let invalid = |reason: String| Error::InvalidArch { name: name.clone(), reason };
        if memory_levels.len() < 2 {
            return Err(invalid(format!("need at least 2 memory levels, got {}", memory_levels.len())));
        }
        if compute_levels.is_empty() {
            return Err(invalid("need at least 1 compute level".into()));
        }
        if bytes_per_word == 0 {
            return Err(invalid("bytes_per_word must be positive".into()));
        }
        if !(mac_energy_pj >= 0.0 && mac_energy_pj.is_finite()) {
            return Err(invalid(format!("mac energy {mac_energy_pj} must be a finite non-negative number")));
        }
        for (i, m) in memory_levels.iter().enumerate() {
            match (i, m.capacity_words) {
                (0, None) => {}
                (0, Some(_)) => return Err(invalid(format!("outermost level {} must be unbounded", m.name))),
                (_, None) => return Err(invalid(format!("only the outermost level may be unbounded ({})", m.name))),
                (_, Some(0)) => return Err(invalid(format!("level {} has zero capacity", m.name))),
                _ => {}
            }
            if !(m.access_energy_pj >= 0.0 && m.access_energy_pj.is_finite()) {
                return Err(invalid(format!("level {} has invalid access energy", m.name)));
            }
            if m.bandwidth_words_per_cycle.is_nan() || m.bandwidth_words_per_cycle <= 0.0 {
                return Err(invalid(format!("level {} needs positive bandwidth", m.name)));
            }
            if m.instances == 0 {
                return Err(invalid(format!("level {} has zero instances", m.name)));
            }
            if memory_levels[..i].iter().any(|o| o.name == m.name) {
                return Err(invalid(format!("duplicate level name {}", m.name)));
            }
        }
        let mut attach = Vec::with_capacity(compute_levels.len());
        for (i, c) in compute_levels.iter().enumerate() {
            if c.units == 0 {
                return Err(invalid(format!("compute level {} has zero units", c.name)));
            }
            if compute_levels[..i].iter().any(|o| o.name == c.name) {
                return Err(invalid(format!("duplicate compute level name {}", c.name)));
            }
            let at = memory_levels
                .iter()
                .position(|m| m.name == c.nested_below)
                .ok_or_else(|| invalid(format!("compute level {} nested below unknown level {}", c.name, c.nested_below)))?;
            if attach.last().is_some_and(|&prev| prev > at) {
                return Err(invalid(format!("compute level {} is outside an earlier compute level", c.name)));
            }
            attach.push(at);
        }
        Ok(AcceleratorConfig { name, bytes_per_word, mac_energy_pj, memory_levels, compute_levels, attach })
    }

    pub fn num_memory_levels(&self) -> usize {
        self.memory_levels.len()
    }

    pub fn num_compute_levels(&self) -> usize {
        self.compute_levels.len()
    }

    /// Index of the memory level a compute level fans out beneath.
    pub fn attach(&self, compute: usize) -> usize {
        self.attach[compute]
    }

    pub fn memory_index(&self, name: &str) -> Option<usize> {
        self.memory_levels.iter().position(|m| m.name == name)
    }

    pub fn compute_index(&self, name: &str) -> Option<usize> {
        self.compute_levels.iter().position(|c| c.name == name)
    }

    pub fn total_units(&self) -> u64 {
        self.compute_levels.iter().map(|c| c.units).product()
    }

    /// Deterministic digest of every field, name included.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    /// The 3-level, 256-PE, 4-ALU configuration used throughout the
    /// experiments: DRAM, a 64 KiB global buffer, and a 256 B buffer per PE.
    pub fn accel_b() -> Self {
        Self::three_level("accel-b", 1, 65_536, 256, 256, 4)
    }

    /// A differently sized sibling of [`accel_b`](Self::accel_b). The sizes
    /// are illustrative, not a reproduction of any published machine.
    pub fn accel_a() -> Self {
        Self::three_level("accel-a", 1, 131_072, 512, 168, 1)
    }

    pub fn three_level(name: &str, bytes_per_word: u32, l2_words: u64, l1_words: u64, pes: u64, alus: u64) -> Self {
        let memory = vec![
            MemoryLevel {
                name: "DRAM".into(),
                capacity_words: None,
                access_energy_pj: DEFAULT_DRAM_ENERGY_PJ,
                bandwidth_words_per_cycle: DEFAULT_DRAM_BANDWIDTH,
                instances: 1,
            },
            MemoryLevel {
                name: "L2".into(),
                capacity_words: Some(l2_words),
                access_energy_pj: DEFAULT_MID_ENERGY_PJ,
                bandwidth_words_per_cycle: DEFAULT_MID_BANDWIDTH,
                instances: 1,
            },
            MemoryLevel {
                name: "L1".into(),
                capacity_words: Some(l1_words),
                access_energy_pj: DEFAULT_INNER_ENERGY_PJ,
                bandwidth_words_per_cycle: DEFAULT_INNER_BANDWIDTH,
                instances: pes,
            },
        ];
        let compute = vec![
            ComputeLevel { name: "PE".into(), units: pes, nested_below: "L2".into() },
            ComputeLevel { name: "ALU".into(), units: alus, nested_below: "L1".into() },
        ];
        Self::new(name, bytes_per_word, DEFAULT_MAC_ENERGY_PJ, memory, compute).expect("preset is valid")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchFile {
    name: String,
    #[serde(default = "default_bytes_per_word")]
    bytes_per_word: u32,
    #[serde(default = "default_mac_energy")]
    mac_energy_pj: f64,
    memory_levels: Vec<MemoryLevelFile>,
    compute_levels: Vec<ComputeLevel>,
}

fn default_bytes_per_word() -> u32 {
    1
}

fn default_mac_energy() -> f64 {
    DEFAULT_MAC_ENERGY_PJ
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemoryLevelFile {
    name: String,
    capacity_words: Option<u64>,
    access_energy_pj: Option<f64>,
    bandwidth: Option<f64>,
    #[serde(default = "one_instance")]
    instances: u64,
}

fn one_instance() -> u64 {
    1
}

pub fn parse_arch(text: &str, origin: &Path) -> Result<AcceleratorConfig> {
    let file: ArchFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))?;
    let n = file.memory_levels.len();
    let levels = file
        .memory_levels
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let (energy, bw) = if i == 0 {
                (DEFAULT_DRAM_ENERGY_PJ, DEFAULT_DRAM_BANDWIDTH)
            } else if i + 1 == n {
                (DEFAULT_INNER_ENERGY_PJ, DEFAULT_INNER_BANDWIDTH)
            } else {
                (DEFAULT_MID_ENERGY_PJ, DEFAULT_MID_BANDWIDTH)
            };
            MemoryLevel {
                name: m.name,
                capacity_words: m.capacity_words,
                access_energy_pj: m.access_energy_pj.unwrap_or(energy),
                bandwidth_words_per_cycle: m.bandwidth.unwrap_or(bw),
                instances: m.instances,
            }
        })
        .collect();
    AcceleratorConfig::new(file.name, file.bytes_per_word, file.mac_energy_pj, levels, file.compute_levels)
}

pub fn load_arch(path: impl AsRef<Path>) -> Result<AcceleratorConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arch(&text, path)
}

pub fn arch_to_json(a: &AcceleratorConfig) -> serde_json::Value {
    serde_json::json!({
        "name": a.name,
        "bytes_per_word": a.bytes_per_word,
        "mac_energy_pj": a.mac_energy_pj,
        "memory_levels": a.memory_levels.iter().map(|m| serde_json::json!({
            "name": m.name,
            "capacity_words": m.capacity_words,
            "access_energy_pj": m.access_energy_pj,
            "bandwidth": m.bandwidth_words_per_cycle,
            "instances": m.instances,
        })).collect::<Vec<_>>(),
        "compute_levels": a.compute_levels,
    })
}
