use thiserror::Error;

/// Errors raised by scene construction, channel synthesis, capacity
/// evaluation and the optimizers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} at ({x:.3}, {y:.3}, {z:.3}) lies outside the room")]
    OutsideRoom { what: String, x: f64, y: f64, z: f64 },

    #[error("zero-length normal for {0}")]
    ZeroNormal(String),

    #[error("coincident points: {0}")]
    CoincidentPoints(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("channel matrix is rank deficient")]
    RankDeficient,

    #[error("direct channel is identically zero")]
    ZeroChannel,

    #[error("case {case} is inconsistent with alpha = {alpha}")]
    CaseMismatch { case: String, alpha: f64 },

    #[error("exhaustive search over {candidates} candidates exceeds the limit of {limit}")]
    InstanceTooLarge { candidates: f64, limit: f64 },

    #[error("scheme {scheme} failed at {snr_db} dB: {source}")]
    Scheme {
        scheme: String,
        snr_db: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
