use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A quadrature did not reach its tolerance. `estimate` is the best value found.
    #[error("{what} did not converge (relative change {achieved:.3e}, estimate {estimate_re} + {estimate_im}i)")]
    Accuracy {
        what: &'static str,
        estimate_re: f64,
        estimate_im: f64,
        achieved: f64,
    },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("ill-conditioned: {0}")]
    Conditioning(String),

    #[error("coverage: {0}")]
    Coverage(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
