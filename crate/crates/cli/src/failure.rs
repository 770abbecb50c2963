use std::fmt;

use dynpmnn::checkpoint::CheckpointError;
use dynpmnn::train::TrainError;

/// Error tagged with the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config files or overrides (exit 1).
    Config(anyhow::Error),
    /// Missing or malformed input data and checkpoints (exit 2).
    Data(anyhow::Error),
    /// Anything else, including failed invariant checks (exit 3).
    Internal(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "configuration error",
            Failure::Data(_) => "data error",
            Failure::Internal(_) => "internal error",
        }
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) | Failure::Internal(e) => e,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:#}", self.kind(), self.inner())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::EmptySpace | TrainError::Space(_) => {
                Failure::Config(e.into())
            }
            TrainError::DimMismatch { .. } => Failure::Data(e.into()),
            _ => Failure::Internal(e.into()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Data(e.into())
    }
}

/// Attach an exit class (and context) to any error.
pub trait Classify<T> {
    fn config(self, context: &str) -> Result<T, Failure>;
    fn data(self, context: &str) -> Result<T, Failure>;
    fn internal(self, context: &str) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn config(self, context: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into().context(context.to_string())))
    }

    fn data(self, context: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into().context(context.to_string())))
    }

    fn internal(self, context: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(e.into().context(context.to_string())))
    }
}
