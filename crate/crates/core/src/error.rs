use thiserror::Error;

use crate::bsde_solver::ConvergenceReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("singular regression system ({0}); retry with ridge > 0")]
    Singular(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("Picard iteration did not converge after {} iterations (last ratios: {:?})", .0.iterations.len(), .0.ratio_tail(3))]
    Convergence(Box<ConvergenceReport>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
