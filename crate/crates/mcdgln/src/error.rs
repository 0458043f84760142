use thiserror::Error;

use crate::connectivity::ConnError;
use crate::dataio::{ConfigError, DataError};
use crate::gradcore::GradError;

/// Crate-level error, grouping failures by the subsystem that raised them.
///
/// The CLI maps these onto exit codes: config/spec problems exit 2, dataset
/// problems exit 3, numerical failures exit 4, checkpoint problems exit 5.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Conn(#[from] ConnError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("training set contains a single class; need both labels present")]
    SingleClassTrainingSet,
    #[error("fold count {folds} exceeds subject count {subjects}")]
    FoldCountExceedsSubjects { folds: usize, subjects: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("gradient check failed: max relative error {worst:.3e} is at or above 1e-4")]
    GradCheckFailed { worst: f64 },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("{0}")]
    Analysis(String),
}

impl Error {
    /// Exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Conn(_) => 3,
            Error::SingleClassTrainingSet | Error::FoldCountExceedsSubjects { .. } => 3,
            Error::Analysis(_) => 3,
            Error::NonFiniteLoss { .. } | Error::GradCheckFailed { .. } => 4,
            Error::CheckpointMismatch(_) => 5,
            Error::Grad(e) => match e {
                GradError::Checkpoint(_) => 5,
                _ => 4,
            },
        }
    }
}
