use thiserror::Error;

use crate::network::Violation;

/// Errors raised by the network, policy, simulation and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("queue `{queue}` appears in more than one resource constraint")]
    OverlappingConstraints { queue: String },

    #[error("queue `{queue}` is not bounded by any constraint of the schedule set")]
    UnboundedQueue { queue: String },

    #[error("more than {limit} maximal schedules; use the constraint form instead of enumerating")]
    Explosion { limit: usize },

    #[error("scale factor at position {index} must be positive (got {value})")]
    InvalidScale { index: usize, value: f64 },

    #[error("routing matrix is not open: I - P is singular or has spectral radius >= 1")]
    NotOpen,

    #[error("queue `{queue}` has zero traffic but positive content")]
    ZeroTraffic { queue: String },

    #[error("unsupported schedule set: {0}")]
    UnsupportedSet(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown identifier `{0}`")]
    UnknownId(String),

    #[error("network spec failed validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
