use counter_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    /// The command ran but had nothing to report on.
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Internal(_) => 4,
            CliError::NotApplicable(_) => 5,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Parse { .. }
            | CoreError::SentimentRange { .. }
            | CoreError::UnknownId { .. }
            | CoreError::NoPositives
            | CoreError::TooFewCandidates { .. }
            | CoreError::NotRecommended { .. }
            | CoreError::Checkpoint(_)
            | CoreError::Io(_) => CliError::Input(e.to_string()),
            CoreError::Infeasible(_) | CoreError::SampleSize { .. } => {
                CliError::Config(e.to_string())
            }
            CoreError::Dimension { .. } | CoreError::NonFinite(_) | CoreError::EmptyBatch => {
                CliError::Internal(e.to_string())
            }
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
