use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {message}")]
    Transport {
        message: String,
        retry_after: Option<Duration>,
    },

    #[error("authentication rejected by upstream (HTTP {status})")]
    Auth { status: u16 },

    #[error("upstream returned HTTP {status}: {message}")]
    Upstream {
        status: u16,
        message: String,
        retry_after: Option<Duration>,
    },

    #[error("upstream cannot provide {field}")]
    Capability { field: String },

    #[error("indeterminate: {0}")]
    Indeterminate(String),

    #[error("malformed upstream response: {0}")]
    Protocol(String),

    #[error("invalid upstream data: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl GatewayError {
    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            GatewayError::Transport { retry_after, .. } | GatewayError::Upstream { retry_after, .. } => *retry_after,
            _ => None,
        }
    }

    pub(crate) fn retryable(&self) -> bool {
        match self {
            GatewayError::Transport { .. } => true,
            GatewayError::Upstream { status, .. } => *status >= 500,
            _ => false,
        }
    }

    pub(crate) fn capability(field: impl Into<String>) -> Self {
        GatewayError::Capability { field: field.into() }
    }
}
