use razorcd::agent::ClientError;

/// Exit codes: 1 for domain errors, 2 for usage and configuration errors.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("{code}: {message}")]
    Api {
        code: String,
        message: String,
        body: Option<String>,
    },
    #[error("{0}")]
    Unreachable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Unreachable(m) => {
                CliError::Unreachable(format!("control plane unreachable: {m}"))
            }
            ClientError::Api { code, message, .. } => CliError::Api {
                code,
                message,
                body: None,
            },
        }
    }
}
