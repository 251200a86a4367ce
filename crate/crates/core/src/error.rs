use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Problems with a relational schema or a causal model over it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("malformed dependency `{dependency}`: {reason}")]
    MalformedDependency { dependency: String, reason: String },
    #[error("model is cyclic: {}", cycle.join(" -> "))]
    CyclicModel { cycle: Vec<String> },
    #[error("invalid schema: {reason}")]
    InvalidSchema { reason: String },
    #[error("invalid relational path: {reason}")]
    InvalidPath { reason: String },
}

/// Failures of d-separation queries and adjustment-set reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReasonError {
    #[error("unknown variable `{0}`")]
    UnknownNode(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("model violates the identification assumptions: {0}")]
    AssumptionViolated(String),
    #[error("latent variable `{0}` cannot be conditioned on")]
    LatentInConditioningSet(String),
    #[error("selection variable `{0}` must be conditioned on")]
    SelectionNotConditioned(String),
    #[error("peer outcome `{0}` cannot be used for adjustment")]
    PeerOutcomeConditioned(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Failures while generating or loading data.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error("invalid graph: {reason}")]
    InvalidGraph { reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mechanism requires an edge attribute that the network does not carry")]
    MissingEdgeAttribute,
}

/// Failures of the automatic differentiation engine.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericError {
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

/// Failures while fitting or applying an estimator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("invalid training configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("degenerate training data: {reason}")]
    Degenerate { reason: String },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("model shape does not match the data: {reason}")]
    ShapeMismatch { reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Failures of the evaluation metrics.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("metrics need at least one value")]
    Empty,
}
