use thiserror::Error;

/// Errors raised by the library. Configuration problems are kept separate from
/// numerical failures so the CLI can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("crossing-form methods disagree (matrix {matrix:.6e}, quadrature {quadrature:.6e}, relative gap {gap:.3e})")]
    FormDisagreement {
        matrix: f64,
        quadrature: f64,
        gap: f64,
    },

    #[error("index identity violated: {0}")]
    IndexIdentity(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
