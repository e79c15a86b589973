//! The end-to-end processing chain: input volume, band split, per-band
//! compression, per-band peak limiting, mixdown, and a full-band limiter
//! over the sum.
//!
//! A [`Pipeline`] owns all stage state for one mono stream. Parameter
//! presets indexed by an integer volume step can be swapped in between
//! blocks; filter and delay state survive a swap unless the crossover
//! layout or a look-ahead changes, in which case the affected stage is
//! rebuilt from silence.

use std::collections::BTreeMap;

use crate::compressor::{Compressor, CompressorParams};
use crate::db_to_linear;
use crate::error::Error;
use crate::filterbank::{BandSplitter, CrossoverSpec};
use crate::limiter::{Limiter, LimiterParams};
use crate::SampleBuffer;

/// Compressor and limiter settings for one band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandParams {
    pub compressor: CompressorParams,
    pub limiter: LimiterParams,
}

/// A partial parameter set applied on top of the base config when its
/// volume step is selected. Absent fields keep their current values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PresetOverlay {
    pub input_volume_db: Option<f64>,
    pub crossovers_hz: Option<Vec<f64>>,
    pub bands: Option<Vec<BandParams>>,
    pub fbl: Option<LimiterParams>,
}

/// Full parameter set for a pipeline: sample rate, input volume, crossover
/// layout, per-band processors, the full-band limiter, and optional
/// volume-step presets.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sample_rate: f64,
    pub input_volume_db: f64,
    pub crossovers_hz: Vec<f64>,
    pub bands: Vec<BandParams>,
    pub fbl: LimiterParams,
    pub presets: BTreeMap<i32, PresetOverlay>,
}

impl PipelineConfig {
    pub fn num_bands(&self) -> usize {
        self.crossovers_hz.len() + 1
    }

    /// Total audio-path delay in samples: the compressor, band-limiter, and
    /// full-band-limiter look-aheads in series (the IIR filterbank adds no
    /// sample delay).
    pub fn reported_latency(&self) -> usize {
        let mbc = self.bands.first().map_or(0, |b| b.compressor.lookahead);
        let mbl = self.bands.first().map_or(0, |b| b.limiter.lookahead);
        mbc + mbl + self.fbl.lookahead
    }

    pub fn crossover_spec(&self) -> CrossoverSpec {
        CrossoverSpec {
            sample_rate: self.sample_rate,
            crossovers: self.crossovers_hz.clone(),
        }
    }

    /// Validate every field, including each preset overlay applied to this
    /// base. Error paths use config-file key syntax.
    pub fn validate(&self) -> Result<(), Error> {
        self.validate_inner("")
    }

    fn validate_inner(&self, prefix: &str) -> Result<(), Error> {
        let key = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        if !self.input_volume_db.is_finite() {
            return Err(Error::config(
                key("input_volume_db"),
                format!("must be finite, got {}", self.input_volume_db),
            ));
        }
        self.crossover_spec().validate(&key("crossover_hz"))?;
        if self.bands.len() != self.num_bands() {
            return Err(Error::config(
                key("bands"),
                format!(
                    "expected {} band entries for {} crossovers, got {}",
                    self.num_bands(),
                    self.crossovers_hz.len(),
                    self.bands.len()
                ),
            ));
        }
        for (i, band) in self.bands.iter().enumerate() {
            band.compressor
                .validate(&key(&format!("bands[{i}].compressor")))?;
            band.limiter
                .validate(&key(&format!("bands[{i}].limiter")))?;
        }
        let mbc_look = self.bands[0].compressor.lookahead;
        let mbl_look = self.bands[0].limiter.lookahead;
        for (i, band) in self.bands.iter().enumerate().skip(1) {
            if band.compressor.lookahead != mbc_look {
                return Err(Error::config(
                    key(&format!("bands[{i}].compressor.lookahead_ms")),
                    "all band compressor look-aheads must match for mixer alignment".to_string(),
                ));
            }
            if band.limiter.lookahead != mbl_look {
                return Err(Error::config(
                    key(&format!("bands[{i}].limiter.lookahead_ms")),
                    "all band limiter look-aheads must match for mixer alignment".to_string(),
                ));
            }
        }
        self.fbl.validate(&key("fbl"))?;
        if prefix.is_empty() {
            for (step, overlay) in &self.presets {
                let overlaid = self.with_overlay(overlay);
                overlaid.validate_inner(&format!("presets.{step}"))?;
            }
        }
        Ok(())
    }

    fn with_overlay(&self, overlay: &PresetOverlay) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.presets = BTreeMap::new();
        if let Some(v) = overlay.input_volume_db {
            cfg.input_volume_db = v;
        }
        if let Some(ref xs) = overlay.crossovers_hz {
            cfg.crossovers_hz = xs.clone();
        }
        if let Some(ref bands) = overlay.bands {
            cfg.bands = bands.clone();
        }
        if let Some(ref fbl) = overlay.fbl {
            cfg.fbl = fbl.clone();
        }
        cfg
    }

    /// The configuration that volume step `step` selects.
    pub fn config_for_step(&self, step: i32) -> Result<PipelineConfig, Error> {
        let overlay = self
            .presets
            .get(&step)
            .ok_or_else(|| Error::UnknownVolumeStep {
                step,
                available: self.presets.keys().copied().collect(),
            })?;
        let mut cfg = self.with_overlay(overlay);
        cfg.presets = self.presets.clone();
        Ok(cfg)
    }
}

/// Scale every sample by `10^(volume_db/20)`. No clipping is applied; the
/// full-band limiter downstream owns overflow protection.
pub fn apply_input_volume(block: &SampleBuffer, volume_db: f64) -> SampleBuffer {
    let gain = db_to_linear(volume_db);
    SampleBuffer::new(
        block.samples().iter().map(|&x| x * gain).collect(),
        block.sample_rate(),
    )
}

/// Gain snapshot of every stage, for end-of-run reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineStats {
    /// Per band: lowest smoothed compressor gain.
    pub compressor_min_gain: Vec<f64>,
    /// Per band: lowest band-limiter gain and clamp count.
    pub limiter_min_gain: Vec<f64>,
    pub limiter_clamped: Vec<u64>,
    pub fbl_min_gain: f64,
    pub fbl_clamped: u64,
}

/// One mono processing stream: splitter, M compressors, M band limiters,
/// mixer, and the full-band limiter, with preallocated scratch buffers.
pub struct Pipeline {
    config: PipelineConfig,
    volume_gain: f64,
    splitter: BandSplitter,
    compressors: Vec<Compressor>,
    limiters: Vec<Limiter>,
    fbl: Limiter,
    scaled: Vec<f64>,
    band_bufs: Vec<Vec<f64>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, Error> {
        config.validate()?;
        let splitter = BandSplitter::new(config.crossover_spec())?;
        let compressors = config
            .bands
            .iter()
            .map(|b| Compressor::new(b.compressor.clone(), config.sample_rate))
            .collect::<Result<Vec<_>, _>>()?;
        let limiters = config
            .bands
            .iter()
            .map(|b| Limiter::new(b.limiter.clone(), config.sample_rate))
            .collect::<Result<Vec<_>, _>>()?;
        let fbl = Limiter::new(config.fbl.clone(), config.sample_rate)?;
        let bands = config.num_bands();
        Ok(Self {
            volume_gain: db_to_linear(config.input_volume_db),
            splitter,
            compressors,
            limiters,
            fbl,
            scaled: Vec::new(),
            band_bufs: vec![Vec::new(); bands],
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn num_bands(&self) -> usize {
        self.config.num_bands()
    }

    /// Total audio-path delay in samples.
    pub fn latency(&self) -> usize {
        self.config.reported_latency()
    }

    /// Grow internal scratch to handle blocks up to `max_block` samples, so
    /// later [`Pipeline::process_into`] calls at or below that size do not
    /// allocate.
    pub fn warm_up(&mut self, max_block: usize) {
        if self.scaled.len() < max_block {
            self.scaled.resize(max_block, 0.0);
        }
        for b in &mut self.band_bufs {
            if b.len() < max_block {
                b.resize(max_block, 0.0);
            }
        }
    }

    /// Process one block; `output.len()` must equal `input.len()`. The
    /// sample rate is the config's. Allocation-free once scratch has grown
    /// to the largest block seen.
    pub fn process_into(&mut self, input: &[f64], output: &mut [f64]) {
        assert_eq!(input.len(), output.len());
        let n = input.len();
        self.warm_up(n);
        for (s, &x) in self.scaled[..n].iter_mut().zip(input) {
            *s = x * self.volume_gain;
        }
        self.splitter
            .split_into(&self.scaled[..n], &mut self.band_bufs);
        for ((comp, lim), buf) in self
            .compressors
            .iter_mut()
            .zip(&mut self.limiters)
            .zip(&mut self.band_bufs)
        {
            comp.process_in_place(&mut buf[..n]);
            lim.process_in_place(&mut buf[..n]);
        }
        output.fill(0.0);
        for buf in &self.band_bufs {
            for (o, &b) in output.iter_mut().zip(&buf[..n]) {
                *o += b;
            }
        }
        self.fbl.process_in_place(output);
    }

    /// Checked, allocating wrapper: verifies the block's sample rate and
    /// returns a new buffer.
    pub fn process_block(&mut self, block: &SampleBuffer) -> Result<SampleBuffer, Error> {
        if block.sample_rate() != self.config.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.config.sample_rate,
                actual: block.sample_rate(),
            });
        }
        let mut out = vec![0.0; block.len()];
        self.process_into(block.samples(), &mut out);
        Ok(SampleBuffer::new(out, self.config.sample_rate))
    }

    /// Switch to the preset for `step` between blocks. Compressor, limiter,
    /// and filter state are preserved where the new parameters allow it;
    /// a changed crossover layout rebuilds and resets the splitter (and the
    /// per-band processors if the band count changed), and a changed
    /// look-ahead rebuilds that stage's delay line.
    pub fn set_volume_step(&mut self, step: i32) -> Result<(), Error> {
        let new = self.config.config_for_step(step)?;
        new.validate()?;
        self.volume_gain = db_to_linear(new.input_volume_db);

        if new.crossovers_hz != self.config.crossovers_hz {
            self.splitter = BandSplitter::new(new.crossover_spec())?;
        }
        if new.num_bands() != self.config.num_bands() {
            self.compressors = new
                .bands
                .iter()
                .map(|b| Compressor::new(b.compressor.clone(), new.sample_rate))
                .collect::<Result<Vec<_>, _>>()?;
            self.limiters = new
                .bands
                .iter()
                .map(|b| Limiter::new(b.limiter.clone(), new.sample_rate))
                .collect::<Result<Vec<_>, _>>()?;
            self.band_bufs = vec![Vec::new(); new.num_bands()];
        } else {
            for (comp, band) in self.compressors.iter_mut().zip(&new.bands) {
                if band.compressor.lookahead != comp.params().lookahead {
                    *comp = Compressor::new(band.compressor.clone(), new.sample_rate)?;
                } else {
                    comp.set_params(band.compressor.clone())?;
                }
            }
            for (lim, band) in self.limiters.iter_mut().zip(&new.bands) {
                if band.limiter.lookahead != lim.params().lookahead {
                    *lim = Limiter::new(band.limiter.clone(), new.sample_rate)?;
                } else {
                    lim.set_params(band.limiter.clone())?;
                }
            }
        }
        if new.fbl.lookahead != self.fbl.params().lookahead {
            self.fbl = Limiter::new(new.fbl.clone(), new.sample_rate)?;
        } else {
            self.fbl.set_params(new.fbl.clone())?;
        }
        self.config = new;
        Ok(())
    }

    /// Reset every stage to silence.
    pub fn reset(&mut self) {
        self.splitter.reset();
        for c in &mut self.compressors {
            c.reset();
        }
        for l in &mut self.limiters {
            l.reset();
        }
        self.fbl.reset();
    }

    pub fn stats(&self) -> PipelineStats {
        PipelineStats {
            compressor_min_gain: self.compressors.iter().map(|c| c.min_gain()).collect(),
            limiter_min_gain: self.limiters.iter().map(|l| l.min_gain()).collect(),
            limiter_clamped: self.limiters.iter().map(|l| l.clamped_samples()).collect(),
            fbl_min_gain: self.fbl.min_gain(),
            fbl_clamped: self.fbl.clamped_samples(),
        }
    }
}
