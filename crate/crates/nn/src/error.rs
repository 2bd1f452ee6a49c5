use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{0}: sequence must contain at least one step")]
    EmptySequence(&'static str),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: non-finite gradient in parameter `{0}`")]
    Divergence(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: &[usize], actual: &[usize]) -> NnError {
    NnError::Shape {
        context,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}
