use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension error: {0}")]
    Dim(String),

    #[error("backward: {0}")]
    Backward(String),

    #[error("invalid pocket: {0}")]
    Pocket(String),

    #[error("invalid fragment library: {0}")]
    Library(String),

    #[error("illegal action: {0}")]
    IllegalAction(String),

    #[error("invalid ligand state: {0}")]
    State(String),

    #[error("enumeration guard exceeded: {0}")]
    Guard(String),

    #[error("invalid value for `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Process exit codes for the command-line tool.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
/// Sampling finished with fewer unique molecules than requested.
pub const EXIT_PARTIAL: i32 = 3;

impl Error {
    /// Configuration, file and format problems map to 2; everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::Checkpoint(_)
            | Error::Json(_)
            | Error::Library(_)
            | Error::Pocket(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}
