//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by configuration, processing, and analysis operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is invalid. `path` names the offending key
    /// using the config-file key path convention, e.g.
    /// `bands[0].compressor.cr1`.
    #[error("invalid config at {path}: {message}")]
    Config { path: String, message: String },

    /// A buffer's sample rate does not match the processor it was fed to.
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: f64, actual: f64 },

    /// Band index outside `0..num_bands`.
    #[error("band index {index} out of range (filterbank has {bands} bands)")]
    BandIndexOutOfRange { index: usize, bands: usize },

    /// The requested volume step has no preset.
    #[error("unknown volume step {step}; available steps: {available:?}")]
    UnknownVolumeStep { step: i32, available: Vec<i32> },

    /// An analysis was asked of an all-zero signal.
    #[error("signal is silent; {metric} is undefined")]
    SilentSignal { metric: &'static str },

    /// The signal is shorter than the analysis requires.
    #[error("signal too short: need at least {needed} samples, got {actual}")]
    SignalTooShort { needed: usize, actual: usize },

    /// No tone was found at the requested fundamental frequency.
    #[error("no fundamental detected at {f0} Hz (level {level_db:.1} dBFS)")]
    NoFundamental { f0: f64, level_db: f64 },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
