use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),
    #[error("insufficient proposals: N = {n_proposals} < L = {n_accept}")]
    InsufficientProposals { n_proposals: usize, n_accept: usize },
    #[error("posterior has no accepted draws")]
    EmptyPosterior,
    #[error("data contains a single class")]
    SingleClassData,
    #[error("handshake mismatch: {0}")]
    HandshakeMismatch(String),
    #[error("transport closed: {0}")]
    TransportClosed(String),
    #[error("report shape mismatch: {0}")]
    ReportShapeMismatch(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("site {site} has {count} minority samples, at least 2 are required")]
    MinorityTooSmall { site: usize, count: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-binary label `{value}` on row {row}")]
    NonBinaryLabel { row: usize, value: String },
    #[error("non-finite feature on row {row}, column `{column}`")]
    NonFiniteFeature { row: usize, column: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
