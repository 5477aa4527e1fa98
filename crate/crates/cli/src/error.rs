use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("all {0} trajectories aborted")]
    AllAborted(usize),

    #[error("numerical failure: {0}")]
    Numerical(qtraj::Error),

    #[error("oracle dimension {dim} exceeds the limit of {max}")]
    OracleSize { dim: usize, max: usize },

    #[error("comparison failed: {0}")]
    CompareFailed(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::AllAborted(_) | CliError::Numerical(_) => 3,
            CliError::OracleSize { .. } => 4,
            CliError::CompareFailed(_) => 5,
            CliError::MissingInput(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<qtraj::Error> for CliError {
    fn from(e: qtraj::Error) -> Self {
        match e {
            qtraj::Error::SizeExceeded { dim, max } => CliError::OracleSize { dim, max },
            qtraj::Error::InvalidModel(_) | qtraj::Error::InvalidArgument(_) => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}
