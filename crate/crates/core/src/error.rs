use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("requested SH degree {requested} exceeds stored degree {stored}")]
    ShDegree { requested: u8, stored: u8 },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("PLY property `{0}` missing")]
    PlyMissingProperty(String),
    #[error("malformed PLY header at byte {offset}: {reason}")]
    PlyHeader { offset: usize, reason: String },
    #[error("PLY payload truncated: expected {expected} bytes, found {found}")]
    PlyTruncated { expected: usize, found: usize },
    #[error("image format: {0}")]
    ImageFormat(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("symbol {0} has zero modeled frequency")]
    ZeroFrequency(u8),
    #[error("corrupt coded scene: {0}")]
    Corrupt(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Engine(#[from] diffeng::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
