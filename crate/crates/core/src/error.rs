use thiserror::Error;

/// Errors raised by the laboratory. Verification failures are not errors;
/// they are reported through [`crate::report::Report`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite integrand value {value} at z = ({re}, {im})")]
    NonFinite { value: f64, re: f64, im: f64 },

    #[error("target {target} not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NoBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
        target: f64,
    },

    #[error("iteration limit {limit} exceeded; trace: {trace}")]
    IterationLimit { limit: usize, trace: String },

    #[error("ill-conditioned system (condition estimate {condition:e}): {message}")]
    IllConditioned { condition: f64, message: String },

    #[error("singular point: {0}")]
    Singular(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid csv in {path}: {message}")]
    Csv { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
