use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse graph document: {0}")]
    Parse(String),

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("conflicting weights {first} and {second} for edge ({u}, {v})")]
    ConflictingEdge {
        u: String,
        v: String,
        first: f64,
        second: f64,
    },

    #[error("non-positive node weight {weight} at node {node}")]
    NonPositiveNodeWeight { node: String, weight: f64 },

    #[error("invalid edge weight {weight} between {u} and {v}")]
    InvalidEdgeWeight { u: String, v: String, weight: f64 },

    #[error("weight matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("operator is not self-adjoint in the node-weighted inner product (deviation {0:e})")]
    NotSelfAdjoint(f64),

    #[error("resolvent requires z < 0, got {0}")]
    NonNegativeZ(f64),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("no high-scale part: the decomposition has no high edges")]
    NoHighScale,

    #[error("isolated node {0} has zero degree")]
    IsolatedNode(usize),

    #[error("rank-deficient least-squares basis")]
    RankDeficient,

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("filter z = {spec} does not match factorization z = {factorization}")]
    ZMismatch { spec: f64, factorization: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("consistency check requires {0}")]
    FilterType(&'static str),

    #[error("missing forward cache")]
    MissingCache,

    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("deflection parameter t = {0} must lie in [0, 1)")]
    Deflection(f64),

    #[error("molecule has no heavy atoms")]
    NoHeavyAtoms,

    #[error("scan needs at least {needed} points, got {got}")]
    ScanTooShort { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
