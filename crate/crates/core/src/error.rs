use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient context for valid padding: {0}")]
    InsufficientContext(String),

    #[error("missing forward record: {0}")]
    MissingRecord(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer {0} has no batch-norm parameters")]
    MissingBatchNorm(usize),

    #[error("model is already folded")]
    AlreadyFolded,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the user's configuration rather than by the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
