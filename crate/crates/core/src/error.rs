use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no projection rows with angle in [{lo}, {hi})")]
    EmptySelection { lo: f64, hi: f64 },

    #[error("POCS-TV diverged at iteration {iteration}: data residual {residual:.6e} exceeds 10x its minimum {minimum:.6e}")]
    Diverged { iteration: usize, residual: f64, minimum: f64 },

    #[error("total spectral energy is zero")]
    ZeroEnergy,

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },

    #[error("network graph: {0}")]
    Graph(String),

    #[error("file format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
