use crate::ingest::Hand;

/// Errors raised by the valuation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),

    #[error("cannot fit a density estimate to an empty sample set")]
    EmptySamples,

    #[error("validation set S{0} empty")]
    EmptyValidationSet(usize),

    #[error("validation set has {len} points, need more than drop = {drop}")]
    ValidationTooSmall { len: usize, drop: usize },

    #[error("invalid search config: {0}")]
    InvalidSearch(String),

    #[error("no records for hand {0}")]
    NoRecordsForHand(Hand),

    #[error("no model for hand {0}")]
    MissingModel(Hand),

    #[error("defense requires non-HR model")]
    DefenseRequiresNonHr,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("value out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid synth config: {0}")]
    InvalidSynth(String),

    #[error("bundle format: {0}")]
    Bundle(String),

    #[error("bundle version {found} is not supported (expected {expected})")]
    BundleVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
