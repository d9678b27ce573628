use std::path::PathBuf;

use crate::microstructure::{Axis, PhaseId};

/// Errors produced anywhere in the homogenization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("voxel payload size mismatch: expected {expected} bytes, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("unknown phase id {0}")]
    UnknownPhase(PhaseId),

    #[error("invalid phase table: {0}")]
    InvalidPhaseTable(String),

    #[error("request out of bounds on axis {axis}: {detail}")]
    OutOfBounds { axis: Axis, detail: String },

    #[error("extent along axis {axis} is odd ({extent}); cannot halve")]
    OddExtent { axis: Axis, extent: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("degenerate element: {0}")]
    DegenerateElement(String),

    #[error("periodic faces do not match; unmatched boundary nodes: {unmatched:?}")]
    NonMatchingPeriodicFaces { unmatched: Vec<usize> },

    #[error("linear solver failed after {iterations} iterations (relative residual {residual:.3e}){}", load_state.map(|k| format!(" in load state {k}")).unwrap_or_default())]
    SolverFailure {
        iterations: usize,
        residual: f64,
        load_state: Option<usize>,
    },

    #[error("meshes are not nested: {0}")]
    NotNested(String),

    #[error("malformed case name {name:?} at position {position}: {reason}")]
    MalformedCaseName {
        name: String,
        position: usize,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical stages (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolverFailure { .. } | Error::DegenerateElement(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
