use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown adapter `{0}` (expected base, phi_minus or phi_plus)")]
    UnknownAdapter(String),
    #[error("non-finite values at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Engine(#[from] diffeng::Error),
    #[error(transparent)]
    Core(#[from] splatfix_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
