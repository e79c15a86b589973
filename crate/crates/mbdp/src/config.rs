//! Pipeline configuration files.
//!
//! The format is a TOML key-value tree. Times are in milliseconds and
//! levels in dBFS; look-aheads are converted to whole samples at load time.
//! Unknown keys are rejected, and every load or validation error names the
//! offending key path (e.g. `bands[0].compressor.cr1`).
//!
//! ```toml
//! sample_rate = 48000.0
//! input_volume_db = 0.0
//! crossover_hz = [70.0, 375.0, 3750.0]
//!
//! [[bands]]
//! [bands.compressor]
//! thre_lw_db = -40.0
//! thre_hi_db = -20.0
//! cr1 = 2.0
//! cr2 = 4.0
//! rms_window_ms = 10.0
//! attack_ms = 5.0
//! release_ms = 50.0
//! lookahead_ms = 5.0
//! curve_mode = "stepped"
//! [bands.limiter]
//! threshold_dbfs = -1.0
//! lookahead_ms = 1.5
//! attack_ms = 1.0
//! release_ms = 50.0
//!
//! # ... one [[bands]] block per band ...
//!
//! [fbl]
//! threshold_dbfs = -0.1
//! lookahead_ms = 1.5
//! attack_ms = 1.0
//! release_ms = 50.0
//!
//! [presets.3]          # overlay selected by volume step 3
//! input_volume_db = -6.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::compressor::{CompressorParams, CurveMode, EventDetect};
use crate::db_to_linear;
use crate::error::Error;
use crate::limiter::LimiterParams;
use crate::pipeline::{BandParams, PipelineConfig, PresetOverlay};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    sample_rate: f64,
    input_volume_db: f64,
    crossover_hz: Vec<f64>,
    bands: Vec<FileBand>,
    fbl: FileLimiter,
    #[serde(default)]
    presets: BTreeMap<String, FileOverlay>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBand {
    compressor: FileCompressor,
    limiter: FileLimiter,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCompressor {
    thre_lw_db: f64,
    thre_hi_db: f64,
    cr1: f64,
    cr2: f64,
    rms_window_ms: f64,
    attack_ms: f64,
    release_ms: f64,
    lookahead_ms: f64,
    curve_mode: CurveMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLimiter {
    threshold_dbfs: f64,
    lookahead_ms: f64,
    attack_ms: f64,
    release_ms: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverlay {
    input_volume_db: Option<f64>,
    crossover_hz: Option<Vec<f64>>,
    bands: Option<Vec<FileBand>>,
    fbl: Option<FileLimiter>,
}

fn ms_to_samples(ms: f64, sample_rate: f64) -> usize {
    (ms * 1e-3 * sample_rate).round().max(0.0) as usize
}

impl FileCompressor {
    fn into_params(self, sample_rate: f64, key: &str) -> Result<CompressorParams, Error> {
        if !(self.lookahead_ms.is_finite() && self.lookahead_ms >= 0.0) {
            return Err(Error::config(
                format!("{key}.lookahead_ms"),
                format!("must be >= 0, got {}", self.lookahead_ms),
            ));
        }
        Ok(CompressorParams {
            thre_lw_db: self.thre_lw_db,
            thre_hi_db: self.thre_hi_db,
            cr1: self.cr1,
            cr2: self.cr2,
            rms_window_ms: self.rms_window_ms,
            attack_ms: self.attack_ms,
            release_ms: self.release_ms,
            lookahead: ms_to_samples(self.lookahead_ms, sample_rate),
            curve_mode: self.curve_mode,
            event_detect: EventDetect::default(),
        })
    }
}

impl FileLimiter {
    fn into_params(self, sample_rate: f64, key: &str) -> Result<LimiterParams, Error> {
        if !(self.threshold_dbfs.is_finite() && self.threshold_dbfs <= 0.0) {
            return Err(Error::config(
                format!("{key}.threshold_dbfs"),
                format!("must be <= 0 dBFS, got {}", self.threshold_dbfs),
            ));
        }
        if !(self.lookahead_ms.is_finite() && self.lookahead_ms > 0.0) {
            return Err(Error::config(
                format!("{key}.lookahead_ms"),
                format!("must be positive, got {}", self.lookahead_ms),
            ));
        }
        let lookahead = ms_to_samples(self.lookahead_ms, sample_rate);
        if lookahead < 1 {
            return Err(Error::config(
                format!("{key}.lookahead_ms"),
                format!(
                    "{} ms rounds to zero samples at {} Hz; at least one sample required",
                    self.lookahead_ms, sample_rate
                ),
            ));
        }
        Ok(LimiterParams {
            threshold: db_to_linear(self.threshold_dbfs),
            lookahead,
            attack_ms: self.attack_ms,
            release_ms: self.release_ms,
        })
    }
}

impl FileBand {
    fn into_params(self, sample_rate: f64, key: &str) -> Result<BandParams, Error> {
        Ok(BandParams {
            compressor: self
                .compressor
                .into_params(sample_rate, &format!("{key}.compressor"))?,
            limiter: self
                .limiter
                .into_params(sample_rate, &format!("{key}.limiter"))?,
        })
    }
}

fn bands_into_params(
    bands: Vec<FileBand>,
    sample_rate: f64,
    prefix: &str,
) -> Result<Vec<BandParams>, Error> {
    bands
        .into_iter()
        .enumerate()
        .map(|(i, b)| b.into_params(sample_rate, &format!("{prefix}bands[{i}]")))
        .collect()
}

impl FileConfig {
    fn into_config(self) -> Result<PipelineConfig, Error> {
        let sample_rate = self.sample_rate;
        let bands = bands_into_params(self.bands, sample_rate, "")?;
        let fbl = self.fbl.into_params(sample_rate, "fbl")?;
        let mut presets = BTreeMap::new();
        for (step_key, overlay) in self.presets {
            let step: i32 = step_key.parse().map_err(|_| {
                Error::config(
                    format!("presets.{step_key}"),
                    "preset keys must be integer volume steps".to_string(),
                )
            })?;
            let prefix = format!("presets.{step_key}.");
            presets.insert(
                step,
                PresetOverlay {
                    input_volume_db: overlay.input_volume_db,
                    crossovers_hz: overlay.crossover_hz,
                    bands: overlay
                        .bands
                        .map(|b| bands_into_params(b, sample_rate, &prefix))
                        .transpose()?,
                    fbl: overlay
                        .fbl
                        .map(|f| f.into_params(sample_rate, &format!("{prefix}fbl")))
                        .transpose()?,
                },
            );
        }
        let config = PipelineConfig {
            sample_rate,
            input_volume_db: self.input_volume_db,
            crossovers_hz: self.crossover_hz,
            bands,
            fbl,
            presets,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parse and validate a config from TOML text.
pub fn parse(text: &str) -> Result<PipelineConfig, Error> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| Error::Config {
        path: "<root>".to_string(),
        message: e.message().to_string(),
    })?;
    let file: FileConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let message = e.inner().message().to_string();
        if path == "." {
            path = "<root>".to_string();
        }
        // A missing key is reported against its parent table; extend the
        // path so the full key is named.
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.strip_suffix('`'))
        {
            if path == "<root>" {
                path = field.to_string();
            } else {
                path = format!("{path}.{field}");
            }
        }
        Error::Config { path, message }
    })?;
    file.into_config()
}

/// Load and validate a config file.
pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig, Error> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: format!("cannot read config file: {e}"),
    })?;
    parse(&text)
}
