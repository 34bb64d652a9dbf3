use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] ergl_core::Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// 2 for bad configuration, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(ergl_core::Error::Config { .. }) => 2,
            CliError::Core(ergl_core::Error::MissingJacobians) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
