use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the library. Variants map one-to-one onto the
/// failure modes the public operations document.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("probabilities sum to {0}, expected exactly 1")]
    NonNormalized(String),
    #[error("value {value} is not a multiple of the grid step {delta}")]
    OffGrid { value: String, delta: String },
    #[error("distribution lacks a symmetry the setting requires: {0}")]
    MissingRequiredSymmetry(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("enumeration of {count} items exceeds the configured cap {cap}")]
    ExplosionGuard { count: u128, cap: u128 },
    #[error("permutation set is not a subgroup: {0}")]
    NotASubgroup(String),
    #[error("mechanism or distribution is not item-symmetric: {0}")]
    NotItemSymmetric(String),
    #[error("zero value for the allocated items but nonzero interim payment {0} for bidder {1}")]
    DivisionByZeroValue(String, usize),
    #[error("mechanism is not ex-interim individually rational: {0}")]
    NotInterimIr(String),
    #[error("marginals are infeasible: {0}")]
    InfeasibleMarginals(String),
    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("no outcome stored for profile {0}")]
    UnknownProfile(String),
    #[error("linear program is {0}")]
    LpStatus(String),
    #[error("bisection did not converge: {0}")]
    NonConvergence(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
