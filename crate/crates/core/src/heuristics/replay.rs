//! Replay buffer: the best mapping found for every workload solved so far
//! on one accelerator.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::AcceleratorConfig;
use crate::cost::CostReport;
use crate::error::{Error, Result};
use crate::mapping::{self, Mapping, MappingDoc};
use crate::workload::{LayerWorkload, OpKind, TensorProjection, WorkloadSignature};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub workload: WorkloadSignature,
    /// Only stored for custom operators; the others use default projections.
    pub projections: Option<Vec<TensorProjection>>,
    pub mapping: Mapping,
    pub report: CostReport,
}

impl ReplayEntry {
    pub fn to_workload(&self) -> Result<LayerWorkload> {
        self.workload.to_workload("replay", self.projections.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    scope: String,
    entries: Vec<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new(a: &AcceleratorConfig) -> Self {
        ReplayBuffer { scope: a.fingerprint(), entries: Vec::new() }
    }

    /// Fingerprint of the accelerator every entry was found on.
    pub fn scope(&self) -> &str {
        &self.scope
    }

    /// Oldest first.
    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_scope(&self, a: &AcceleratorConfig) -> Result<()> {
        let found = a.fingerprint();
        if found == self.scope {
            Ok(())
        } else {
            Err(Error::ArchMismatch { expected: self.scope.clone(), found })
        }
    }

    /// Store a search result. An entry for the same signature survives only
    /// if its EDP is strictly lower; otherwise the new result replaces it and
    /// becomes the most recent entry. Returns whether the buffer changed.
    pub fn record_result(
        &mut self,
        w: &LayerWorkload,
        a: &AcceleratorConfig,
        m: &Mapping,
        report: &CostReport,
    ) -> Result<bool> {
        self.check_scope(a)?;
        match mapping::is_legal(m, w, a)? {
            mapping::Verdict::Legal => {}
            mapping::Verdict::Illegal(v) => return Err(Error::Illegal(v)),
        }
        let signature = w.signature();
        if let Some(i) = self.entries.iter().position(|e| e.workload.same_key(&signature)) {
            if self.entries[i].report.edp <= report.edp {
                return Ok(false);
            }
            self.entries.remove(i);
        }
        self.entries.push(ReplayEntry {
            workload: signature,
            projections: (w.op_kind() == OpKind::Custom).then(|| w.projections().to_vec()),
            mapping: m.clone(),
            report: report.clone(),
        });
        Ok(true)
    }

    pub fn to_json(&self, a: &AcceleratorConfig) -> Result<String> {
        self.check_scope(a)?;
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let w = e.to_workload()?;
                Ok(EntryFile {
                    workload: e.workload.clone(),
                    projections: e.projections.clone(),
                    mapping: e.mapping.to_doc(&w, a),
                    report: e.report.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let file = BufferFile { scope: self.scope.clone(), arch: a.name.clone(), entries };
        Ok(serde_json::to_string_pretty(&file).expect("buffer serializes"))
    }

    pub fn from_json(text: &str, origin: &Path, a: &AcceleratorConfig) -> Result<Self> {
        let file: BufferFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))?;
        let buf = ReplayBuffer { scope: file.scope, entries: Vec::new() };
        buf.check_scope(a)?;
        let entries = file
            .entries
            .into_iter()
            .map(|e| {
                let w = e.workload.to_workload("replay", e.projections.clone())?;
                let m = Mapping::from_doc(&e.mapping, &w, a)?;
                match mapping::is_legal(&m, &w, a)? {
                    mapping::Verdict::Legal => {}
                    mapping::Verdict::Illegal(v) => return Err(Error::Illegal(v)),
                }
                Ok(ReplayEntry { workload: e.workload, projections: e.projections, mapping: m, report: e.report })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReplayBuffer { entries, ..buf })
    }

    pub fn save(&self, path: &Path, a: &AcceleratorConfig) -> Result<()> {
        fs::write(path, self.to_json(a)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, a: &AcceleratorConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path, a)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferFile {
    scope: String,
    /// Informational; the scope fingerprint is authoritative.
    arch: String,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    workload: WorkloadSignature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    projections: Option<Vec<TensorProjection>>,
    mapping: MappingDoc,
    report: CostReport,
}
