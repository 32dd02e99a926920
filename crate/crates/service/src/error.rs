use hedge_gateway::GatewayError;
use thiserror::Error;

/// Command failure, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Upstream(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Upstream(_) => 3,
        }
    }

    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Upstream(m) => CliError::Upstream(format!("{what}: {m}")),
        }
    }
}

impl From<hedge_core::Error> for CliError {
    fn from(e: hedge_core::Error) -> Self {
        match e {
            hedge_core::Error::UnknownEstimator { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Precondition(_) => CliError::Usage(e.to_string()),
            _ => CliError::Upstream(e.to_string()),
        }
    }
}
