use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token id {id} at position {position} is out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, position: usize, vocab: usize },
    #[error("sequence of length {len} exceeds the positional table ({max})")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sequence must start with the classification token {expected}, found {found}")]
    MissingClassToken { expected: u32, found: u32 },
    #[error("checkpoint: {msg} at byte {offset}")]
    Checkpoint { msg: String, offset: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
