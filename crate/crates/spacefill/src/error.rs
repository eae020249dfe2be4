//! Error type shared by every module of the crate.

use crate::histogram::Violation;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong while building, evaluating or verifying a construction.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A histogram failed validation; the payload names the first broken invariant.
    #[error("invalid histogram: {0}")]
    InvalidHistogram(Violation),

    /// An index, prefix length or parameter lies outside its admissible range.
    #[error("{what} out of range: got {value}, admissible {admissible}")]
    OutOfRange { what: &'static str, value: String, admissible: String },

    /// Vector or matrix shapes do not chain.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    /// A conditional was requested for an index prefix that carries no mass.
    #[error("prefix {prefix:?} has zero marginal mass")]
    ZeroMass { prefix: Vec<usize> },

    /// A piecewise-linear map does not satisfy the boundary conditions required for a pushforward.
    #[error("boundary condition violated: {0}")]
    BoundaryCondition(String),

    /// A quantization step was not of the form `1/A` with `A` a positive integer.
    #[error("quantization step must be 1/A for a positive integer A, got denominator {0}")]
    InvalidDelta(i64),

    /// A ledger operation needed quantized fields that were never filled in.
    #[error("mass ledger has not been quantized yet")]
    Unquantized,

    /// The input was expected to be a quantized histogram but carries no conditional table.
    #[error("target is not a quantized histogram")]
    NotQuantized,

    /// The quantization audit found weights outside both grids.
    #[error("quantization audit failed: {neither} weight(s) lie on neither grid")]
    AuditFailed { neither: usize },

    /// Grid counting cannot certify the requested tolerance at the requested mesh.
    #[error("mesh too coarse: documented error bound {bound:e} exceeds tolerance {tolerance:e}")]
    MeshTooCoarse { bound: f64, tolerance: f64 },

    /// The exact transport solver refuses instances beyond desk scale.
    #[error("support of {points} points exceeds the exact solver limit of {limit}")]
    SizeLimit { points: usize, limit: usize },

    /// A measure does not have unit mass.
    #[error("measure is not normalized: total mass {total}")]
    Unnormalized { total: f64 },

    /// A required collection was empty.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A network description is structurally malformed.
    #[error("malformed network: {0}")]
    MalformedNetwork(String),

    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::InvalidHistogram(v)
    }
}

pub(crate) fn out_of_range(
    what: &'static str,
    value: impl std::fmt::Display,
    admissible: impl std::fmt::Display,
) -> Error {
    Error::OutOfRange { what, value: value.to_string(), admissible: admissible.to_string() }
}
