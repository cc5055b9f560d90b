use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("label {got} out of range for {classes} classes")]
    LabelOutOfRange { got: usize, classes: usize },

    #[error("font index {got} out of range 1..={m}")]
    FontIndex { got: usize, m: usize },

    #[error("non-finite {term} at step {step}")]
    NumericAbort { step: u64, term: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("verification failed: {0}")]
    Verify(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
