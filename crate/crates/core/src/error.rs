//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got a tensor of {len} elements")]
    NonScalarLoss { len: usize },

    #[error("timestep {t} out of range 1..={t_count}")]
    TimestepOutOfRange { t: usize, t_count: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model expects {expected} conditioning but was given {given}")]
    ConditioningMismatch {
        expected: &'static str,
        given: &'static str,
    },

    #[error("non-finite loss at step {step} (t={t:?}): total={total}, diffusion={diffusion}, kl={kl}")]
    NonFiniteLoss {
        step: usize,
        t: Option<usize>,
        total: f64,
        diffusion: f64,
        kl: f64,
    },

    #[error("covariance is rank {rank}, need at least rank 2 for a PCA plane")]
    DegenerateCovariance { rank: usize },

    #[error("streaming statistics need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("csv row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error("checkpoint: unsupported format marker {found:?} (expected {expected:?})")]
    CheckpointVersion { found: String, expected: String },

    #[error("checkpoint: truncated while reading {section}")]
    CheckpointTruncated { section: String },

    #[error("checkpoint: {section} holds {found} values but the config implies {expected}")]
    CheckpointShape {
        section: String,
        found: usize,
        expected: usize,
    },

    #[error("checkpoint: malformed header: {0}")]
    CheckpointHeader(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
