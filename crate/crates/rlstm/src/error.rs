use std::path::{Path, PathBuf};

use rlstm_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_INTERNAL: i32 = 1;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed input file.
    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Input(String),

    #[error("gradient check failed: block {block} has relative error {error:.3e}")]
    GradientMismatch { block: String, error: f64 },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// 2 for bad input or configuration, 3 for data-contract violations, 4 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Format { .. } | CliError::Input(_) => EXIT_INPUT,
            CliError::GradientMismatch { .. } => EXIT_NUMERIC,
            CliError::Core(e) => match e {
                CoreError::Config(_) => EXIT_INPUT,
                CoreError::Data(_) | CoreError::Shape { .. } => EXIT_DATA,
                CoreError::NonFinite(_) | CoreError::Divergence { .. } => EXIT_NUMERIC,
                CoreError::Internal(_) => EXIT_INTERNAL,
            },
        }
    }
}
