//! Error type shared across the crate.

/// Errors surfaced by data generation, IO, and model plumbing.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown road id {0}")]
    NotFound(usize),

    #[error("trajectory generation failed after {attempts} attempts")]
    GenerationFailure { attempts: u32 },

    #[error("assignment inconsistent with features: {0}")]
    CorruptAssignment(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite loss at step {step} (batch trajectories {traj_ids:?})")]
    NonFiniteLoss { step: u64, traj_ids: Vec<u64> },

    #[error("no acceptable detour after {0} attempts")]
    DetourFailure(u32),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
