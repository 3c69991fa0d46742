use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible threshold: {0}")]
    InfeasibleThreshold(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("run truncated after round {last_complete_round}: {reason}")]
    RunTruncated {
        /// Number of rounds that completed before the data ran out.
        last_complete_round: usize,
        reason: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn config(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: msg.into(),
    }
}
