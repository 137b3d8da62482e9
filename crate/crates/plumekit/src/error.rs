use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Toolkit-wide error type. Message strings for data-path failures are part
/// of the file-format contract and are matched by callers and tests.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty patch")]
    EmptyPatch,

    #[error("corrupt RLE: {0}")]
    CorruptRle(String),

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("bad scene header: {0}")]
    BadHeader(String),

    #[error("window out of bounds: origin ({row}, {col}), size {size}, scene {height}x{width}")]
    OutOfBounds {
        row: usize,
        col: usize,
        size: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("plume placement rejected: {0}")]
    PlacementRejected(String),

    #[error("placement exhausted after {0} retries")]
    PlacementExhausted(usize),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("no hotspot core")]
    NoHotspotCore,

    #[error("degenerate distribution")]
    DegenerateDistribution,

    #[error("too small to skeletonize")]
    TooSmallToSkeletonize,

    #[error("undefined correlation")]
    UndefinedCorrelation,

    #[error("single-class training input")]
    SingleClass,

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("missing classifier for high-precision mode")]
    MissingClassifier,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
