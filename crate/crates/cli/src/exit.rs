use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("config: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::Config(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl From<ftm_core::error::Error> for CliError {
    fn from(e: ftm_core::error::Error) -> Self {
        use ftm_core::error::Error as E;
        match e {
            E::Io { .. } | E::Auth { .. } | E::RetryExhausted { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
