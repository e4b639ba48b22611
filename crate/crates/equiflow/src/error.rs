use std::process::ExitCode;

/// Failures surfaced by the CLI, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config fields or incompatible files (exit 2).
    #[error("{0}")]
    Config(String),
    /// Training or sampling produced non-finite numbers (exit 3).
    #[error("numerical abort: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(String),
    /// A verification check failed (exit 1).
    #[error("verification failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) | CliError::Check(_) => 1,
        })
    }
}

impl From<equiflow_core::Error> for CliError {
    fn from(e: equiflow_core::Error) -> Self {
        use equiflow_core::Error as E;
        match e {
            E::NonFinite { .. } | E::Integration { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
