use std::path::{Path, PathBuf};

/// Errors surfaced by the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A file named by the user could not be read or parsed.
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    /// The run configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An output artifact could not be written.
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] tabflow_core::Error),
}

impl CliError {
    pub fn input(path: &Path, message: impl ToString) -> Self {
        Self::Input {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn output(path: &Path, source: std::io::Error) -> Self {
        Self::Output {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad invocations (unreadable inputs, invalid configuration),
    /// 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input { .. } | Self::Config(_) => 2,
            Self::Core(tabflow_core::Error::Config(_)) => 2,
            Self::Output { .. } | Self::Core(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
