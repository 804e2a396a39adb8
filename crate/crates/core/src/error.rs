use std::path::PathBuf;

use thiserror::Error;

use crate::mapping::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("workload `{id}`: {reason}")]
    InvalidWorkload { id: String, reason: String },

    #[error("accelerator `{name}`: {reason}")]
    InvalidArch { name: String, reason: String },

    /// The mapping does not even have the shape of a mapping for this
    /// workload/accelerator pair (unknown dim or level, wrong arity).
    #[error("malformed mapping: {0}")]
    Structural(String),

    #[error("illegal mapping: {}", format_violations(.0))]
    Illegal(Vec<Violation>),

    #[error("no legal sample found after {attempts} attempts")]
    NoLegalSample { attempts: usize },

    #[error("canonical map space has {size} points, above the cap of {cap}")]
    SpaceTooLarge { size: String, cap: u64 },

    #[error("cannot rescale mapping: {0}")]
    Unscalable(String),

    #[error("replay buffer is scoped to accelerator {expected}, got {found}")]
    ArchMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input (files, flags) rather than
    /// failures while running a search.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::InvalidWorkload { .. }
                | Error::InvalidArch { .. }
                | Error::Structural(_)
                | Error::InvalidConfig(_)
                | Error::ArchMismatch { .. }
        )
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidWorkload { .. } => "invalid_workload",
            Error::InvalidArch { .. } => "invalid_arch",
            Error::Structural(_) => "structural",
            Error::Illegal(_) => "illegal_mapping",
            Error::NoLegalSample { .. } => "no_legal_sample",
            Error::SpaceTooLarge { .. } => "space_too_large",
            Error::Unscalable(_) => "unscalable",
            Error::ArchMismatch { .. } => "arch_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
        }
    }
}
