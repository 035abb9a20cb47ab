use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("infeasible spawn: {0}")]
    InfeasibleSpawn(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown head `{0}`")]
    UnknownHead(String),

    #[error("missing prerequisite stage `{stage}` (looked for {})", path.display())]
    MissingPrerequisite { stage: String, path: PathBuf },

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("empty trajectory history")]
    EmptyHistory,

    #[error("replay mismatch at step {step}: {detail}")]
    ReplayMismatch { step: usize, detail: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable error class, printed by the command-line tool.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::InfeasibleSpawn(_) => "infeasible-spawn",
            Error::Contract(_) => "contract-violation",
            Error::Shape(_) => "shape-mismatch",
            Error::UnknownHead(_) => "unknown-head",
            Error::MissingPrerequisite { .. } => "missing-prerequisite",
            Error::TrainingAborted(_) => "training-aborted",
            Error::EmptyHistory => "empty-history",
            Error::ReplayMismatch { .. } => "replay-mismatch",
            Error::Checkpoint(_) => "checkpoint-format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
