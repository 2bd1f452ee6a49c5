use std::path::PathBuf;

use blockcast_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed index: {0}")]
    MalformedIndex(String),
    #[error("min-max scaler applied before fitting")]
    UnfittedScaler,
    #[error("division guard: {0}")]
    DivisionGuard(&'static str),
    #[error("arity error: {0}")]
    Arity(String),
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario has zero duration")]
    EmptyScenario,
    #[error("need at least 3 points, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("timing error: {0}")]
    Timing(String),
    #[error("coordinate out of range: {0}")]
    Range(String),
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("AUC undefined: {0}")]
    UndefinedAuc(&'static str),
    #[error("data error: {0}")]
    Data(String),
    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("missing {path}; run `blockcast {stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Error {
    Error::Shape {
        context,
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}
