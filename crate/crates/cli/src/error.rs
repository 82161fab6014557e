use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed config, override or parameter set.
    #[error("{0}")]
    Validation(String),
    /// A computation failed on valid input.
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Classifies a library error and prefixes it with where it came from.
    pub fn from_core(context: &str, err: ncdr_core::Error) -> Self {
        let msg = format!("{context}: {err}");
        if err.is_validation() {
            CliError::Validation(msg)
        } else {
            CliError::Numerical(msg)
        }
    }

    pub fn io(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }

    pub fn context(self, prefix: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{prefix}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{prefix}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{prefix}: {m}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}
