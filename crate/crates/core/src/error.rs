use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The explicit stepper was requested on a grid violating `dt <= dx^2 / 2`,
    /// or a stochastic run was requested with `delta = 0`.
    #[error("refused: {0}")]
    Refused(String),

    #[error("Picard iteration did not converge after {iterations} iterations (last gap {last_gap:e})")]
    NonConvergence { iterations: usize, last_gap: f64, gaps: Vec<f64> },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A run configuration field failed validation.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("csv: {0}")]
    Csv(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), message: message.into() }
}
