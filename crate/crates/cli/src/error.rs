use lyapinit_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("quality gate failed: {0}")]
    Gate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Gate(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_)
            | CoreError::Csv(_)
            | CoreError::Corrupt(_)
            | CoreError::Version { .. }
            | CoreError::Dataset(_) => CliError::Io(e.to_string()),
            CoreError::Diverged { .. } => CliError::Gate(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
