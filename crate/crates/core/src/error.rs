//! Error types shared across the simulator.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed csv at row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{path}: row {row}, column {column}: {message}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("dataset has no nodes")]
    NoNodes,
    #[error("invalid windowing: {0}")]
    Windowing(String),
    #[error("round {round} outside admissible range [{first}, {last}]")]
    RoundOutOfRange { round: usize, first: usize, last: usize },
    #[error("node {node} out of range (dataset has {nodes} nodes)")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum DriftError {
    #[error("window entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("window entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("empty window")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("not a probability distribution: {0}")]
    NotDistribution(String),
    #[error("drift state has not been bootstrapped")]
    NotBootstrapped,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input length {got} does not match expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("non-finite gradient for parameter block {0}")]
    NonFiniteGradient(&'static str),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("model shape mismatch: (hs={0}, F={1}) vs (hs={2}, F={3})")]
    Shape(usize, usize, usize, usize),
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("payload truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unsupported wire format (magic {magic:?}, version {version})")]
    Version { magic: [u8; 4], version: u32 },
    #[error("payload has {extra} trailing bytes")]
    Trailing { extra: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("participant set is empty")]
    Empty,
    #[error("participant {0} listed twice")]
    Duplicate(usize),
    #[error("participant {index} out of range for {nodes} nodes")]
    OutOfRange { index: usize, nodes: usize },
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("error table is empty")]
    Empty,
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("seasonal scale is zero; series is constant at lag {0}")]
    ZeroScale(usize),
    #[error("series length {len} does not exceed periodicity {period}")]
    ShortSeries { len: usize, period: usize },
    #[error("need at least {needed} residuals, have {have}")]
    InsufficientHistory { needed: usize, have: usize },
    #[error("invalid interval: {0}")]
    Interval(String),
    #[error("oracle made no progress within budget of {0} iterations")]
    OracleStalled(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Artifact(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Validation failures map to exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
