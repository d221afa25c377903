use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    #[error("no MEC available for association")]
    NoAssociation,
    #[error("invalid node: {0}")]
    InvalidNode(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("no computing resources granted (rho = {0})")]
    NoResources(f64),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("action error: {0}")]
    Action(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user-provided configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
