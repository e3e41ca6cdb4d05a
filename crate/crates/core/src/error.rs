use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("stale batch: {0}")]
    StaleBatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("training halted at iteration {iteration}: {reason}")]
    Halted {
        iteration: usize,
        reason: String,
        dump: Box<serde_json::Value>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
