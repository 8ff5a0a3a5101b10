//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,

    #[error("cutoff {cutoff_hz} Hz outside (0, {nyquist_hz}) for sample rate {sample_rate} Hz")]
    InvalidCutoff {
        cutoff_hz: f64,
        nyquist_hz: f64,
        sample_rate: f64,
    },

    #[error("FIR tap count {0} must be odd and at least 3")]
    InvalidTaps(usize),

    #[error("zero-variance input: {context}")]
    ZeroVariance { context: &'static str },

    #[error("shape mismatch: {context}")]
    ShapeError { context: String },

    #[error("time-diversity group {group} mixes different plaintexts")]
    GroupingError { group: usize },

    #[error("storage: {0}")]
    StorageError(#[from] std::io::Error),

    #[error("corrupt container: {context}")]
    CorruptContainer { context: String },

    #[error("CP length estimation failed: no candidate period rises above the noise floor")]
    EstimationFailed,

    #[error("no segmentation matches above threshold")]
    NoMatches,

    #[error("sweep grids differ: {context}")]
    GridMismatch { context: String },

    #[error("insufficient profiling data: byte {byte}, HW class {class} has no traces")]
    InsufficientProfilingData { byte: usize, class: usize },

    #[error("degenerate profile: byte {byte} shows no class separation anywhere")]
    DegenerateProfile { byte: usize },

    #[error("degenerate attack set: byte {byte} has constant plaintexts")]
    DegenerateAttackSet { byte: usize },

    #[error("profile frequency {profile_hz} Hz does not match trace set frequency {set_hz} Hz")]
    FrequencyMismatch { profile_hz: f64, set_hz: f64 },

    #[error("keyspace of {log2_size:.1} bits exceeds the 2^24 enumeration guard")]
    OracleTooLarge { log2_size: f64 },

    #[error("insufficient traces for requested subsets: need {needed}, have {available}")]
    SubsetError { needed: usize, available: usize },

    #[error("collection failed at {frequency_hz} Hz: {details}")]
    CollectionFailed { frequency_hz: f64, details: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}
