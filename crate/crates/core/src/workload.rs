//! Loop-nest workloads: operator shape, tensor projections and densities.
//!
//! A workload is a perfectly nested loop over named dimensions. Each of the
//! three operand tensors is indexed by a subset of those dimensions; the
//! convolution input additionally uses sliding-window (halo) pairs such as
//! `(Y, R)`, whose footprint is `y + r - 1` rather than `y * r` (stride 1).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONV2D_DIMS: [&str; 7] = ["B", "K", "C", "Y", "X", "R", "S"];
pub const GEMM_DIMS: [&str; 3] = ["M", "N", "K"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Conv2d,
    Gemm,
    /// Arbitrary loop nest with explicitly declared projections.
    Custom,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Gemm => "gemm",
            OpKind::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Weight,
    Input,
    Output,
}

impl TensorRole {
    pub const ALL: [TensorRole; 3] = [TensorRole::Weight, TensorRole::Input, TensorRole::Output];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TensorRole::Weight => "weight",
            TensorRole::Input => "input",
            TensorRole::Output => "output",
        }
    }
}

impl fmt::Display for TensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub extent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorProjection {
    pub tensor: TensorRole,
    pub relevant_dims: Vec<String>,
    /// `(spatial_dim, window_dim)` pairs; both members must also be listed
    /// in `relevant_dims` or be added implicitly.
    #[serde(default)]
    pub halo_pairs: Vec<(String, String)>,
}

impl TensorProjection {
    fn new(tensor: TensorRole, dims: &[&str], halo: &[(&str, &str)]) -> Self {
        TensorProjection {
            tensor,
            relevant_dims: dims.iter().map(|s| s.to_string()).collect(),
            halo_pairs: halo.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

/// Index form of a projection used by the cost model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorShape {
    /// Bit `d` set when dimension `d` selects a different element of the
    /// tensor (halo window dims included).
    pub relevant: u64,
    /// Relevant dims that are not part of a halo pair.
    pub plain: Vec<usize>,
    pub halo: Vec<(usize, usize)>,
}

impl TensorShape {
    pub fn is_relevant(&self, dim: usize) -> bool {
        self.relevant & (1 << dim) != 0
    }
}

/// Operand densities used when a workload is evaluated sparsely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Density {
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default = "one")]
    pub input: f64,
    #[serde(default = "one")]
    pub output: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Density {
    fn default() -> Self {
        Density { weight: 1.0, input: 1.0, output: 1.0 }
    }
}

impl Density {
    pub fn get(&self, role: TensorRole) -> f64 {
        match role {
            TensorRole::Weight => self.weight,
            TensorRole::Input => self.input,
            TensorRole::Output => self.output,
        }
    }

    pub fn is_dense(&self) -> bool {
        self.weight == 1.0 && self.input == 1.0 && self.output == 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWorkload {
    id: String,
    op_kind: OpKind,
    dims: Vec<Dimension>,
    projections: Vec<TensorProjection>,
    density: Density,
    shapes: [TensorShape; 3],
}

impl LayerWorkload {
    /// CONV2D from extents in `B,K,C,Y,X,R,S` order.
    pub fn conv2d(id: impl Into<String>, extents: [u64; 7]) -> Result<Self> {
        let dims = CONV2D_DIMS
            .iter()
            .zip(extents)
            .map(|(n, e)| Dimension { name: n.to_string(), extent: e })
            .collect();
        Self::new(id, OpKind::Conv2d, dims, default_projections(OpKind::Conv2d), Density::default())
    }

    /// GEMM from extents in `M,N,K` order.
    pub fn gemm(id: impl Into<String>, extents: [u64; 3]) -> Result<Self> {
        let dims = GEMM_DIMS
            .iter()
            .zip(extents)
            .map(|(n, e)| Dimension { name: n.to_string(), extent: e })
            .collect();
        Self::new(id, OpKind::Gemm, dims, default_projections(OpKind::Gemm), Density::default())
    }

    pub fn custom(
        id: impl Into<String>,
        dims: Vec<Dimension>,
        projections: Vec<TensorProjection>,
    ) -> Result<Self> {
        Self::new(id, OpKind::Custom, dims, projections, Density::default())
    }

    pub fn new(
        id: impl Into<String>,
        op_kind: OpKind,
        dims: Vec<Dimension>,
        projections: Vec<TensorProjection>,
        density: Density,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidWorkload { id: id.clone(), reason };

        if dims.is_empty() || dims.len() > 32 {
            return Err(invalid(format!("expected 1..=32 dimensions, got {}", dims.len())));
        }
        let mut seen = BTreeSet::new();
        for d in &dims {
            if d.extent == 0 {
                return Err(invalid(format!("dimension {} has extent 0", d.name)));
            }
            if !seen.insert(d.name.as_str()) {
                return Err(invalid(format!("dimension {} declared twice", d.name)));
            }
        }
        if let Some(expected) = reference_dims(op_kind) {
            let names: Vec<&str> = dims.iter().map(|d| d.name.as_str()).collect();
            if names != expected {
                return Err(invalid(format!(
                    "{op_kind} expects dimensions {expected:?} in that order, got {names:?}"
                )));
            }
        }
        let mut macs: u64 = 1;
        for d in &dims {
            macs = macs
                .checked_mul(d.extent)
                .ok_or_else(|| invalid("total MAC count overflows 64 bits".into()))?;
        }
        for (role, v) in [("weight", density.weight), ("input", density.input), ("output", density.output)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{role} density {v} outside (0, 1]")));
            }
        }

        let roles: Vec<TensorRole> = projections.iter().map(|p| p.tensor).collect();
        if projections.len() != 3 || TensorRole::ALL.iter().any(|r| !roles.contains(r)) {
            return Err(invalid("need exactly one weight, input and output projection".into()));
        }
        let index_of = |name: &str| dims.iter().position(|d| d.name == name);
        let mut shapes: Vec<Option<TensorShape>> = vec![None, None, None];
        for p in &projections {
            let mut relevant = 0u64;
            let mut halo = Vec::new();
            let mut in_halo = 0u64;
            for (a, b) in &p.halo_pairs {
                let (ia, ib) = match (index_of(a), index_of(b)) {
                    (Some(ia), Some(ib)) if ia != ib => (ia, ib),
                    _ => return Err(invalid(format!("bad halo pair ({a}, {b}) on {}", p.tensor))),
                };
                if (in_halo >> ia) & 1 == 1 || (in_halo >> ib) & 1 == 1 {
                    return Err(invalid(format!("dimension reused across halo pairs on {}", p.tensor)));
                }
                in_halo |= (1 << ia) | (1 << ib);
                halo.push((ia, ib));
            }
            for name in &p.relevant_dims {
                let i = index_of(name).ok_or_else(|| {
                    invalid(format!("{} projection names unknown dimension {name}", p.tensor))
                })?;
                relevant |= 1 << i;
            }
            relevant |= in_halo;
            let plain = (0..dims.len())
                .filter(|&i| (relevant >> i) & 1 == 1 && (in_halo >> i) & 1 == 0)
                .collect();
            shapes[p.tensor.index()] = Some(TensorShape { relevant, plain, halo });
        }
        let [w, i, o] = [shapes[0].take(), shapes[1].take(), shapes[2].take()];
        let shapes = [w.unwrap(), i.unwrap(), o.unwrap()];

        let workload = LayerWorkload { id: id.clone(), op_kind, dims, projections, density, shapes };
        if op_kind != OpKind::Custom && workload.reduction_dims().is_empty() {
            return Err(invalid("no reduction dimension".into()));
        }
        Ok(workload)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn op_kind(&self) -> OpKind {
        self.op_kind
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn num_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn extent(&self, dim: usize) -> u64 {
        self.dims[dim].extent
    }

    pub fn extents(&self) -> Vec<u64> {
        self.dims.iter().map(|d| d.extent).collect()
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn dim_name(&self, dim: usize) -> &str {
        &self.dims[dim].name
    }

    pub fn projections(&self) -> &[TensorProjection] {
        &self.projections
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn shape(&self, role: TensorRole) -> &TensorShape {
        &self.shapes[role.index()]
    }

    /// Dims that index both operands but not the output.
    pub fn reduction_dims(&self) -> Vec<usize> {
        let w = self.shape(TensorRole::Weight).relevant;
        let i = self.shape(TensorRole::Input).relevant;
        let o = self.shape(TensorRole::Output).relevant;
        (0..self.dims.len()).filter(|&d| ((w & i) & !o) >> d & 1 == 1).collect()
    }

    pub fn total_macs(&self) -> u128 {
        self.dims.iter().map(|d| d.extent as u128).product()
    }

    /// Full size in words of one tensor.
    pub fn tensor_size(&self, role: TensorRole) -> u128 {
        let s = self.shape(role);
        let e = |d: usize| self.dims[d].extent as u128;
        let plain: u128 = s.plain.iter().map(|&d| e(d)).product();
        let halo: u128 = s.halo.iter().map(|&(a, b)| e(a) + e(b) - 1).product();
        plain * halo
    }

    pub fn with_density(&self, density: Density) -> Result<Self> {
        Self::new(self.id.clone(), self.op_kind, self.dims.clone(), self.projections.clone(), density)
    }

    pub fn with_extents(&self, id: impl Into<String>, extents: &[u64]) -> Result<Self> {
        if extents.len() != self.dims.len() {
            return Err(Error::InvalidWorkload {
                id: id.into(),
                reason: format!("expected {} extents", self.dims.len()),
            });
        }
        let dims = self
            .dims
            .iter()
            .zip(extents)
            .map(|(d, &e)| Dimension { name: d.name.clone(), extent: e })
            .collect();
        Self::new(id, self.op_kind, dims, self.projections.clone(), self.density)
    }

    pub fn signature(&self) -> WorkloadSignature {
        WorkloadSignature {
            op_kind: self.op_kind,
            extents: self.dims.iter().map(|d| (d.name.clone(), d.extent)).collect(),
            density: self.density,
        }
    }
}

fn reference_dims(op: OpKind) -> Option<&'static [&'static str]> {
    match op {
        OpKind::Conv2d => Some(&CONV2D_DIMS),
        OpKind::Gemm => Some(&GEMM_DIMS),
        OpKind::Custom => None,
    }
}

pub fn default_projections(op: OpKind) -> Vec<TensorProjection> {
    match op {
        OpKind::Conv2d => vec![
            TensorProjection::new(TensorRole::Weight, &["K", "C", "R", "S"], &[]),
            TensorProjection::new(TensorRole::Input, &["B", "C", "Y", "X"], &[("Y", "R"), ("X", "S")]),
            TensorProjection::new(TensorRole::Output, &["B", "K", "Y", "X"], &[]),
        ],
        OpKind::Gemm => vec![
            TensorProjection::new(TensorRole::Weight, &["K", "N"], &[]),
            TensorProjection::new(TensorRole::Input, &["M", "K"], &[]),
            TensorProjection::new(TensorRole::Output, &["M", "N"], &[]),
        ],
        OpKind::Custom => Vec::new(),
    }
}

/// What the replay buffer remembers about a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSignature {
    pub op_kind: OpKind,
    pub extents: Vec<(String, u64)>,
    pub density: Density,
}

impl WorkloadSignature {
    pub fn same_key(&self, other: &WorkloadSignature) -> bool {
        self.op_kind == other.op_kind && self.extents == other.extents && self.density == other.density
    }

    /// Rebuild a workload with default projections; custom workloads need
    /// the projections supplied by the caller.
    pub fn to_workload(&self, id: &str, projections: Option<Vec<TensorProjection>>) -> Result<LayerWorkload> {
        let dims = self
            .extents
            .iter()
            .map(|(n, e)| Dimension { name: n.clone(), extent: *e })
            .collect();
        let projections = projections.unwrap_or_else(|| default_projections(self.op_kind));
        LayerWorkload::new(id, self.op_kind, dims, projections, self.density)
    }
}

/// Number of dimensions whose extents differ. Workloads of different
/// operator kinds are never similar: the distance is `usize::MAX`.
pub fn editing_distance(a: &LayerWorkload, b: &LayerWorkload) -> Result<usize> {
    if a.op_kind != b.op_kind {
        return Ok(usize::MAX);
    }
    let names_a: BTreeSet<&str> = a.dims.iter().map(|d| d.name.as_str()).collect();
    let names_b: BTreeSet<&str> = b.dims.iter().map(|d| d.name.as_str()).collect();
    if names_a != names_b {
        return Err(Error::InvalidWorkload {
            id: format!("{}/{}", a.id, b.id),
            reason: "dimension name sets differ".into(),
        });
    }
    Ok(a
        .dims
        .iter()
        .filter(|d| b.dims.iter().find(|e| e.name == d.name).map(|e| e.extent) != Some(d.extent))
        .count())
}

/// Σ |ln(a_d / b_d)| over dimensions, used to break editing-distance ties.
pub fn log_extent_distance(a: &LayerWorkload, b: &LayerWorkload) -> f64 {
    a.dims
        .iter()
        .filter_map(|d| {
            b.dims
                .iter()
                .find(|e| e.name == d.name)
                .map(|e| ((d.extent as f64) / (e.extent as f64)).ln().abs())
        })
        .sum()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadRecord {
    id: String,
    op: OpKind,
    dims: BTreeMap<String, u64>,
    #[serde(default)]
    density: Option<Density>,
    #[serde(default)]
    projections: Option<Vec<TensorProjection>>,
    /// Dimension order for custom workloads; defaults to the key order of
    /// `dims` (alphabetical).
    #[serde(default)]
    order: Option<Vec<String>>,
}

impl WorkloadRecord {
    fn into_workload(self) -> Result<LayerWorkload> {
        let invalid = |reason: String| Error::InvalidWorkload { id: self.id.clone(), reason };
        let names: Vec<String> = match (reference_dims(self.op), &self.order) {
            (Some(reference), None) => reference.iter().map(|s| s.to_string()).collect(),
            (Some(_), Some(_)) => return Err(invalid("`order` is only allowed for custom workloads".into())),
            (None, Some(order)) => order.clone(),
            (None, None) => self.dims.keys().cloned().collect(),
        };
        for key in self.dims.keys() {
            if !names.contains(key) {
                return Err(invalid(format!("unknown dimension {key} for {}", self.op)));
            }
        }
        let dims = names
            .iter()
            .map(|n| {
                self.dims
                    .get(n)
                    .map(|&e| Dimension { name: n.clone(), extent: e })
                    .ok_or_else(|| invalid(format!("missing dimension {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let projections = match (self.op, self.projections) {
            (OpKind::Custom, Some(p)) => p,
            (OpKind::Custom, None) => return Err(invalid("custom workloads need `projections`".into())),
            (_, Some(_)) => return Err(invalid("`projections` is only allowed for custom workloads".into())),
            (op, None) => default_projections(op),
        };
        LayerWorkload::new(self.id.clone(), self.op, dims, projections, self.density.unwrap_or_default())
    }
}

pub fn parse_workloads(text: &str, origin: &Path) -> Result<Vec<LayerWorkload>> {
    let records: Vec<WorkloadRecord> = serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))?;
    let workloads = records.into_iter().map(WorkloadRecord::into_workload).collect::<Result<Vec<_>>>()?;
    let mut ids = BTreeSet::new();
    for w in &workloads {
        if !ids.insert(w.id()) {
            return Err(Error::InvalidWorkload { id: w.id().to_string(), reason: "duplicate id".into() });
        }
    }
    Ok(workloads)
}

/// Load a JSON array of workload records, preserving file order.
pub fn load_workloads(path: impl AsRef<Path>) -> Result<Vec<LayerWorkload>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_workloads(&text, path)
}

/// Serialize workloads back to the file format.
pub fn workloads_to_json(workloads: &[LayerWorkload]) -> serde_json::Value {
    let records: Vec<serde_json::Value> = workloads
        .iter()
        .map(|w| {
            let dims: serde_json::Map<String, serde_json::Value> =
                w.dims.iter().map(|d| (d.name.clone(), d.extent.into())).collect();
            let mut obj = serde_json::json!({ "id": w.id, "op": w.op_kind, "dims": dims });
            if !w.density.is_dense() {
                obj["density"] = serde_json::to_value(w.density).unwrap();
            }
            if w.op_kind == OpKind::Custom {
                obj["projections"] = serde_json::to_value(&w.projections).unwrap();
                obj["order"] = serde_json::to_value(w.dims.iter().map(|d| &d.name).collect::<Vec<_>>()).unwrap();
            }
            obj
        })
        .collect();
    serde_json::Value::Array(records)
}
