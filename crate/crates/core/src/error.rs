//! Error types shared across the estimation, selection and I/O layers.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum RaeddaError {
    #[error("covariance matrix is degenerate: {0}")]
    DegenerateCovariance(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("mixture component {component} has effective size ~0")]
    EmptyComponent { component: usize },

    #[error("model pair ({learning}, {discovery}) violates the partial-order lattice")]
    ModelLatticeViolation { learning: String, discovery: String },

    #[error("initialization failed: {0}")]
    InitializationFailure(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("numerical underflow: {0}")]
    NumericalUnderflow(String),

    #[error("eigenvalue-ratio constraint must satisfy c >= 1, got {0}")]
    InvalidConstraint(f64),

    #[error("scenario generation failed: {0}")]
    GenerationFailure(String),

    #[error("model search failed: all grid cells errored; diagnostics: {0:?}")]
    SearchFailure(Vec<String>),

    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("training set contains no labelled rows for any class")]
    EmptyTrainingClass,

    #[error("configuration error: {0}")]
    ConfigError(String),

    #[error("unsupported artifact schema version {0}")]
    SchemaVersion(u32),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RaeddaError>;
