use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or physically meaningless configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A function argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A path echo does not fit inside the fast-time receive window.
    #[error("echo with delay {delay:.6e} s exceeds the fast-time window [{window_start:.6e}, {window_end:.6e}) s")]
    EchoOutsideWindow {
        delay: f64,
        window_start: f64,
        window_end: f64,
    },

    /// The dictionary would not fit in the configured memory budget.
    #[error("dictionary needs {required} bytes, budget is {budget} bytes")]
    ResourceBudget { required: usize, budget: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed I/Q file: {0}")]
    Format(String),

    #[error("failed to parse scenario {path}: {message}")]
    Scenario { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
