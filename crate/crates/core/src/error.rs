use std::path::PathBuf;

use f0dg_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step} ({phase}): {detail}")]
    NonFinite { step: usize, phase: String, detail: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 for bad input or broken preconditions, 2 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Pipeline(_)
            | Error::Alignment(_)
            | Error::Contract(_)
            | Error::Parse { .. }
            | Error::Json(_)
            | Error::Checkpoint(_) => 1,
            Error::Eval(_) | Error::Io { .. } | Error::NonFinite { .. } | Error::Tensor(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
