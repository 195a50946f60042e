use neva_core::NevaError;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, invalid configuration, or a missing input path.
    #[error("{0}")]
    Usage(String),
    /// Inputs exist but their content is unusable.
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 1,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<NevaError> for CliError {
    fn from(e: NevaError) -> Self {
        match e {
            NevaError::InvalidArgument(_) | NevaError::Io { .. } => CliError::Usage(e.to_string()),
            NevaError::Data(_) | NevaError::Csv(_) | NevaError::Json(_) | NevaError::Image(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
