//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector that should be normalized has a norm at or below the
    /// degeneracy threshold.
    #[error("degenerate norm {norm:.3e} (threshold {threshold:.3e})")]
    DegenerateNorm { norm: f64, threshold: f64 },

    /// A 3x3 matrix failed the orthonormality or determinant check.
    #[error("matrix is not a rotation: {reason}")]
    NotARotation { reason: String },

    /// The chordal-mean projection matrix is numerically rank deficient.
    #[error("rank-deficient matrix: second singular value {sigma:.3e}")]
    RankDeficient { sigma: f64 },

    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    /// A covariance matrix is expected to be symmetric positive semi-definite.
    #[error("matrix is not positive semi-definite: {reason}")]
    NotPositiveSemidefinite { reason: String },

    /// Cholesky factorization failed even after jitter was applied.
    #[error("singular covariance matrix")]
    SingularCovariance,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    /// A training target quaternion deviates from unit norm.
    #[error("non-unit target quaternion: norm {norm}")]
    NonUnitTarget { norm: f64 },

    /// A landmark has non-positive depth along the optical axis.
    #[error("landmark behind camera: depth {depth}")]
    BehindCamera { depth: f64 },

    /// A projected landmark fell outside the sensor.
    #[error("projection out of bounds: ({u}, {v})")]
    ProjectionOutOfBounds { u: f64, v: f64 },

    #[error("missing edge between nodes {from} and {to}")]
    MissingEdge { from: usize, to: usize },

    #[error("singular normal equations in Gauss-Newton step")]
    SingularNormalEquations,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
