use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("function value is not finite at eigenvalue {eigenvalue} (index {index})")]
    NonFiniteResult { index: usize, eigenvalue: f64 },

    #[error("inner system of the Sherman-Morrison-Woodbury update is singular")]
    SingularInnerSystem,

    #[error("index ({k}, {l}) out of range for a {m}x{n} grid")]
    IndexOutOfRange { k: usize, l: usize, m: usize, n: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("law {0} is not supported by this operation")]
    UnsupportedLaw(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("symmetric eigendecomposition did not converge")]
    DecompositionFailure,

    #[error("covariance is not positive semidefinite (eigenvalue {0})")]
    NotPositiveSemidefinite(f64),

    #[error("requested truncation {requested} exceeds numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("ensemble with {0} member(s) is degenerate for this operation")]
    DegenerateEnsemble(usize),

    #[error("innovation covariance HQH^T + R is singular")]
    SingularInnovation,

    #[error("data error covariance R is not symmetric positive definite")]
    SingularR,

    #[error("cross-check of {what} failed: discrepancy {discrepancy:e} exceeds {tolerance:e}")]
    CrossCheckFailed { what: &'static str, discrepancy: f64, tolerance: f64 },

    #[error("all particle weights underflowed to zero")]
    AllWeightsZero,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
