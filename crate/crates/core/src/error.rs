use std::path::PathBuf;

use thiserror::Error;
use traphic_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate detection for agent {agent_id} at frame {frame}")]
    DuplicateDetection {
        line: u64,
        frame: u64,
        agent_id: i64,
    },
    #[error("homography: {0}")]
    Homography(String),
    #[error("agent {0} is not an ego candidate in this window")]
    NotEgoCandidate(i64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset does not match model: {0}")]
    DatasetMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("non-finite density at future frame {frame}")]
    NonFiniteDensity { frame: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Numeric failures as opposed to bad input data or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::NonFiniteDensity { .. }
                | Error::Tensor(TensorError::NonFinite { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
