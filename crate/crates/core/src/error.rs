//! Error types, grouped by pipeline stage.

use thiserror::Error;

/// Data-model and ingestion failures.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("dataset is empty{0}")]
    EmptyDataset(String),
    #[error("declared feasible-action map has no entry for state key [{0}]")]
    UnknownStateKey(String),
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("cannot parse predicate '{0}' (expected `<feature> <op> <value>`)")]
    BadPredicate(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Signal-extraction failures.
#[derive(Debug, Error)]
pub enum SignalError {
    #[error("extractor '{extractor}' needs feature '{feature}' which the schema does not declare")]
    MissingFeature { extractor: String, feature: String },
    #[error("cannot compute signals on an empty trajectory set")]
    EmptySet,
    #[error("extractor name '{0}' is already registered")]
    DuplicateName(String),
    #[error("no extractor registered under '{0}'")]
    UnknownExtractor(String),
    #[error("signal config declares {config} signals but schema declares {schema}")]
    SignalCountMismatch { config: usize, schema: usize },
}

/// Q-function training and evaluation failures.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("discount factor must satisfy 0 <= gamma < 1, got {0}")]
    InvalidGamma(f64),
    #[error("invalid training parameter: {0}")]
    InvalidSpec(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("expected {expected} models (one per signal), got {got}")]
    ModelCountMismatch { expected: usize, got: usize },
    #[error("training data is empty")]
    EmptyDataset,
    #[error("{0}")]
    Data(#[from] DataError),
}

/// Linear-program construction and solving failures.
#[derive(Debug, Error)]
pub enum LpError {
    #[error("q-matrix entry for a feasible action is not finite (transition {transition}, signal {signal})")]
    NonFiniteQ { transition: usize, signal: usize },
    #[error("problem has no constraint rows (every state degenerate)")]
    NoRows,
    #[error("lp is infeasible, which this formulation cannot produce; solver self-check failed")]
    Infeasible,
    #[error("numerical failure in lp solve: {0}")]
    NumericalFailure(String),
}

/// Prediction-policy training and evaluation failures.
#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Data(#[from] DataError),
}
