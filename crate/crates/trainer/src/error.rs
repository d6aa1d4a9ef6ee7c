use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] ascl_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl TrainError {
    /// True for problems with user input rather than with the run itself.
    pub fn is_usage(&self) -> bool {
        matches!(self, TrainError::Config(_) | TrainError::Core(ascl_core::Error::Config(_)))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
