//! Streaming multiband audio dynamics processing.
//!
//! The crate splits full-band audio into M phase-matched bands with a
//! reconfigurable Linkwitz-Riley crossover filterbank, applies an
//! independently parameterized two-knee compressor and look-ahead peak
//! limiter per band, mixes the bands back together, and guards the sum
//! with a full-band limiter. Analysis helpers (crest factor, Welch PSD,
//! THD, windowed peak statistics) support before/after measurement.
//!
//! Processing is block-oriented and streaming: every stateful stage
//! produces identical output regardless of how the input is chopped into
//! blocks, and the pipeline hot path performs no allocation after warm-up.
//! All internal processing is in `f64`; interface samples are normalized
//! to full scale ±1.0.
//!
//! ```
//! use mbdp::{BandSplitter, CrossoverSpec, SampleBuffer};
//!
//! let spec = CrossoverSpec::new(48000.0, vec![70.0, 375.0, 3750.0])?;
//! let mut splitter = BandSplitter::new(spec)?;
//! let block = SampleBuffer::new(vec![0.25; 1024], 48000.0);
//! let bands = splitter.split(&block)?;
//! assert_eq!(bands.len(), 4);
//! # Ok::<(), mbdp::Error>(())
//! ```

pub mod analysis;
pub mod biquad;
pub mod compressor;
pub mod config;
pub mod error;
pub mod filterbank;
pub mod limiter;
pub mod pipeline;

pub use biquad::{Biquad, BiquadCoeffs};
pub use compressor::{Compressor, CompressorParams, CurveMode};
pub use error::Error;
pub use filterbank::{BandSplitter, CrossoverSpec};
pub use limiter::{Limiter, LimiterParams};
pub use pipeline::{Pipeline, PipelineConfig};

/// A mono sample sequence tagged with its sample rate.
///
/// Samples are normalized full-scale ±1.0. Stateful processors validate
/// that a buffer's rate matches their configuration before touching it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Convert a gain in dB to a linear multiplier: `10^(db/20)`.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10.0_f64.powf(db / 20.0)
}

/// Convert a linear amplitude to dB, with a -120 dB silence floor.
#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1e-6 {
        -120.0
    } else {
        20.0 * x.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_conversions() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(-20.0) - 0.1).abs() < 1e-15);
        assert!((db_to_linear(-6.0206) - 0.5).abs() < 1e-6);
        assert_eq!(linear_to_db(0.0), -120.0);
        assert!((linear_to_db(1.0)).abs() < 1e-12);
    }
}
