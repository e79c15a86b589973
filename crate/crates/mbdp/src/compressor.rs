//! Per-band two-knee compressor: RMS level estimation, optional transient
//! event detection, the two-segment compression curve, gain smoothing, and
//! look-ahead gain application.
//!
//! The gain target is recomputed once per frame (64 samples at 48 kHz,
//! scaled with the sample rate) from the running mean square of the input.
//! The smoothed gain then moves toward that target one per-sample step at a
//! time, which keeps the per-frame smoothing law exact at frame boundaries
//! while staying free of zipper steps in between. The audio path is delayed
//! by the look-ahead, so gain computed from incoming material acts before
//! that material reaches the output.

use std::io::Write;

use crate::db_to_linear;
use crate::error::Error;

/// Frame hop is 64 samples at 48 kHz; other rates scale proportionally.
pub(crate) fn frame_hop(sample_rate: f64) -> usize {
    ((sample_rate * 64.0 / 48000.0).round() as usize).max(1)
}

/// One-pole coefficient for a time constant of `ms` milliseconds at one
/// update per sample.
fn one_pole(ms: f64, sample_rate: f64) -> f64 {
    (-1.0 / (ms * 1e-3 * sample_rate)).exp()
}

/// Shape of the compression curve's upper segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    /// Upper segment referenced to the high threshold alone, which leaves a
    /// gain step where the two sloped segments meet.
    Stepped,
    /// Upper segment offset by the middle segment's full reduction so the
    /// curve is continuous at the high threshold.
    Continuous,
}

/// Transient detector settings: a fast and a slow envelope of the squared
/// input, with an event declared when the fast one exceeds the slow one by
/// `trigger_db`. Disabled by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDetect {
    pub enabled: bool,
    pub fast_window_ms: f64,
    pub slow_window_ms: f64,
    pub trigger_db: f64,
}

impl Default for EventDetect {
    fn default() -> Self {
        Self {
            enabled: false,
            fast_window_ms: 1.0,
            slow_window_ms: 50.0,
            trigger_db: 6.0,
        }
    }
}

/// The four curve parameters plus timing and windowing for one band's
/// compressor.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorParams {
    /// Low knee threshold in dBFS (must be < `thre_hi_db`).
    pub thre_lw_db: f64,
    /// High knee threshold in dBFS (must be <= 0).
    pub thre_hi_db: f64,
    /// Ratio applied between the thresholds (>= 1).
    pub cr1: f64,
    /// Ratio applied above the high threshold (>= `cr1`).
    pub cr2: f64,
    /// Mean-square estimator time constant in ms.
    pub rms_window_ms: f64,
    /// Gain smoother time constant when gain is falling, in ms.
    pub attack_ms: f64,
    /// Gain smoother time constant when gain is rising, in ms.
    pub release_ms: f64,
    /// Look-ahead delay applied to the audio path, in samples.
    pub lookahead: usize,
    pub curve_mode: CurveMode,
    pub event_detect: EventDetect,
}

impl Default for CompressorParams {
    fn default() -> Self {
        Self {
            thre_lw_db: -40.0,
            thre_hi_db: -20.0,
            cr1: 2.0,
            cr2: 4.0,
            rms_window_ms: 10.0,
            attack_ms: 5.0,
            release_ms: 50.0,
            lookahead: 240,
            curve_mode: CurveMode::Stepped,
            event_detect: EventDetect::default(),
        }
    }
}

impl CompressorParams {
    /// Validate ranges, reporting errors against config key paths rooted at
    /// `prefix` (e.g. `bands[0].compressor`).
    pub(crate) fn validate(&self, prefix: &str) -> Result<(), Error> {
        let key = |k: &str| format!("{prefix}.{k}");
        if self.thre_hi_db.is_nan() || self.thre_hi_db > 0.0 {
            return Err(Error::config(
                key("thre_hi_db"),
                format!("must be <= 0 dB, got {}", self.thre_hi_db),
            ));
        }
        if self.thre_lw_db.is_nan() || self.thre_lw_db >= self.thre_hi_db {
            return Err(Error::config(
                key("thre_lw_db"),
                format!(
                    "must be below thre_hi_db ({} >= {})",
                    self.thre_lw_db, self.thre_hi_db
                ),
            ));
        }
        if self.cr1.is_nan() || self.cr1 < 1.0 {
            return Err(Error::config(
                key("cr1"),
                format!("must be >= 1.0, got {}", self.cr1),
            ));
        }
        if self.cr2.is_nan() || self.cr2 < self.cr1 {
            return Err(Error::config(
                key("cr2"),
                format!("must be >= cr1 ({} < {})", self.cr2, self.cr1),
            ));
        }
        for (name, v) in [
            ("rms_window_ms", self.rms_window_ms),
            ("attack_ms", self.attack_ms),
            ("release_ms", self.release_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    key(name),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if self.event_detect.enabled
            && !(self.event_detect.fast_window_ms > 0.0 && self.event_detect.slow_window_ms > 0.0)
        {
            return Err(Error::config(
                key("event_detect"),
                "envelope windows must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Intermediate adaptive gain in dB for input level `level_db`.
///
/// Below the low threshold the gain is 0 dB (linear processing); between
/// the thresholds the first ratio applies; above the high threshold the
/// second ratio applies, either stepped or continuity-corrected depending
/// on the curve mode.
pub fn compression_gain_db(level_db: f64, params: &CompressorParams) -> f64 {
    let lw = params.thre_lw_db;
    let hi = params.thre_hi_db;
    if level_db < lw {
        0.0
    } else if level_db < hi {
        (1.0 - 1.0 / params.cr1) * (lw - level_db)
    } else {
        let upper = (1.0 - 1.0 / params.cr2) * (hi - level_db);
        match params.curve_mode {
            CurveMode::Stepped => upper,
            CurveMode::Continuous => (1.0 - 1.0 / params.cr1) * (lw - hi) + upper,
        }
    }
}

/// Linear multiplier for a gain of `p` dB: `10^(p/20)`.
#[inline]
pub fn linear_gain(p: f64) -> f64 {
    db_to_linear(p)
}

/// Running mean-square level estimator producing one dBFS value per frame.
#[derive(Debug, Clone)]
pub struct LevelEstimator {
    coeff: f64,
    mean_sq: f64,
    hop: usize,
    frame_pos: usize,
}

impl LevelEstimator {
    pub fn new(window_ms: f64, sample_rate: f64) -> Self {
        Self {
            coeff: one_pole(window_ms, sample_rate),
            mean_sq: 0.0,
            hop: frame_hop(sample_rate),
            frame_pos: 0,
        }
    }

    pub fn reset(&mut self) {
        self.mean_sq = 0.0;
        self.frame_pos = 0;
    }

    #[inline(always)]
    pub(crate) fn update(&mut self, x: f64) {
        self.mean_sq = self.coeff * self.mean_sq + (1.0 - self.coeff) * x * x;
    }

    /// Current level in dBFS, floored at -120 dB.
    #[inline]
    pub fn level_db(&self) -> f64 {
        (10.0 * (self.mean_sq + 1e-12).log10()).max(-120.0)
    }

    /// Feed a block and collect the level at each frame start it contains.
    pub fn process(&mut self, block: &[f64]) -> Vec<f64> {
        let mut levels = Vec::new();
        for &x in block {
            self.update(x);
            if self.frame_pos == 0 {
                levels.push(self.level_db());
            }
            self.frame_pos += 1;
            if self.frame_pos == self.hop {
                self.frame_pos = 0;
            }
        }
        levels
    }
}

/// Fast/slow envelope transient detector.
///
/// Events are suppressed for one slow window after construction or reset,
/// while the envelopes charge from zero; without that gate the fast
/// envelope's quicker rise from cold state would read as a transient on any
/// steady signal.
#[derive(Debug, Clone)]
pub struct EventDetector {
    enabled: bool,
    fast_coeff: f64,
    slow_coeff: f64,
    trigger_ratio: f64,
    fast_sq: f64,
    slow_sq: f64,
    warmup: u64,
    seen: u64,
    hop: usize,
    frame_pos: usize,
}

impl EventDetector {
    pub fn new(settings: &EventDetect, sample_rate: f64) -> Self {
        Self {
            enabled: settings.enabled,
            fast_coeff: one_pole(settings.fast_window_ms, sample_rate),
            slow_coeff: one_pole(settings.slow_window_ms, sample_rate),
            trigger_ratio: db_to_linear(settings.trigger_db).powi(2),
            fast_sq: 0.0,
            slow_sq: 0.0,
            warmup: (settings.slow_window_ms * 1e-3 * sample_rate).round() as u64,
            seen: 0,
            hop: frame_hop(sample_rate),
            frame_pos: 0,
        }
    }

    pub fn reset(&mut self) {
        self.fast_sq = 0.0;
        self.slow_sq = 0.0;
        self.seen = 0;
        self.frame_pos = 0;
    }

    #[inline(always)]
    pub(crate) fn update(&mut self, x: f64) {
        let sq = x * x;
        self.fast_sq = self.fast_coeff * self.fast_sq + (1.0 - self.fast_coeff) * sq;
        self.slow_sq = self.slow_coeff * self.slow_sq + (1.0 - self.slow_coeff) * sq;
        self.seen = self.seen.saturating_add(1);
    }

    /// True when the fast envelope exceeds the slow one by the trigger.
    #[inline]
    pub fn triggered(&self) -> bool {
        self.enabled
            && self.seen >= self.warmup
            && self.fast_sq > self.trigger_ratio * (self.slow_sq + 1e-12)
    }

    /// Feed a block and report the detector decision at each frame start.
    pub fn process(&mut self, block: &[f64]) -> Vec<bool> {
        let mut events = Vec::new();
        for &x in block {
            self.update(x);
            if self.frame_pos == 0 {
                events.push(self.triggered());
            }
            self.frame_pos += 1;
            if self.frame_pos == self.hop {
                self.frame_pos = 0;
            }
        }
        events
    }
}

/// One-pole gain smoother. The time constant is the attack when the target
/// is below the current gain (gain falling) or an event fired, the release
/// otherwise; the choice is made when a target is set and held until the
/// next one.
#[derive(Debug, Clone)]
pub struct GainSmoother {
    gain: f64,
    target: f64,
    alpha: f64,
    sample_attack: f64,
    sample_release: f64,
    frame_attack: f64,
    frame_release: f64,
}

impl GainSmoother {
    pub fn new(attack_ms: f64, release_ms: f64, sample_rate: f64) -> Self {
        let hop = frame_hop(sample_rate) as f64;
        Self {
            gain: 1.0,
            target: 1.0,
            alpha: 1.0,
            sample_attack: one_pole(attack_ms, sample_rate),
            sample_release: one_pole(release_ms, sample_rate),
            frame_attack: (-hop / (attack_ms * 1e-3 * sample_rate)).exp(),
            frame_release: (-hop / (release_ms * 1e-3 * sample_rate)).exp(),
        }
    }

    pub fn reset(&mut self) {
        self.gain = 1.0;
        self.target = 1.0;
        self.alpha = 1.0;
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Install the target for the coming frame and pick attack or release.
    #[inline]
    pub fn set_target(&mut self, target: f64, event: bool) {
        self.target = target;
        self.alpha = if target < self.gain || event {
            self.sample_attack
        } else {
            self.sample_release
        };
    }

    /// One per-sample step toward the current target.
    #[inline(always)]
    pub fn step_sample(&mut self) -> f64 {
        if self.target != self.gain {
            self.gain = self.alpha * self.gain + (1.0 - self.alpha) * self.target;
        }
        self.gain
    }

    /// Advance one whole frame toward `target` in closed form; equal to
    /// one frame's worth of per-sample steps.
    pub fn step_frame(&mut self, target: f64, event: bool) -> f64 {
        let alpha = if target < self.gain || event {
            self.frame_attack
        } else {
            self.frame_release
        };
        if target != self.gain {
            self.gain = alpha * self.gain + (1.0 - alpha) * target;
        }
        self.gain
    }
}

/// Streaming compressor for one band.
pub struct Compressor {
    params: CompressorParams,
    sample_rate: f64,
    hop: usize,
    frame_pos: usize,
    estimator: LevelEstimator,
    detector: EventDetector,
    smoother: GainSmoother,
    delay: DelayLine,
    min_gain: f64,
}

impl Compressor {
    pub fn new(params: CompressorParams, sample_rate: f64) -> Result<Self, Error> {
        params.validate("compressor")?;
        Ok(Self {
            estimator: LevelEstimator::new(params.rms_window_ms, sample_rate),
            detector: EventDetector::new(&params.event_detect, sample_rate),
            smoother: GainSmoother::new(params.attack_ms, params.release_ms, sample_rate),
            delay: DelayLine::new(params.lookahead),
            hop: frame_hop(sample_rate),
            frame_pos: 0,
            min_gain: 1.0,
            params,
            sample_rate,
        })
    }

    pub fn params(&self) -> &CompressorParams {
        &self.params
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Look-ahead latency of the audio path, in samples.
    pub fn latency(&self) -> usize {
        self.params.lookahead
    }

    /// Lowest smoothed gain seen since construction or the last reset.
    pub fn min_gain(&self) -> f64 {
        self.min_gain
    }

    /// Current smoothed linear gain.
    pub fn gain(&self) -> f64 {
        self.smoother.gain()
    }

    /// Current mean-square level in dBFS.
    pub fn level_db(&self) -> f64 {
        self.estimator.level_db()
    }

    /// Replace curve and timing parameters, keeping estimator, smoother,
    /// and delay-line state. The look-ahead must stay the same; changing it
    /// changes latency and requires a new instance.
    pub fn set_params(&mut self, params: CompressorParams) -> Result<(), Error> {
        params.validate("compressor")?;
        if params.lookahead != self.params.lookahead {
            return Err(Error::config(
                "compressor.lookahead_ms",
                "cannot change look-ahead on a live instance".to_string(),
            ));
        }
        self.estimator.coeff = one_pole(params.rms_window_ms, self.sample_rate);
        let mut detector = EventDetector::new(&params.event_detect, self.sample_rate);
        detector.fast_sq = self.detector.fast_sq;
        detector.slow_sq = self.detector.slow_sq;
        detector.seen = self.detector.seen;
        detector.frame_pos = self.detector.frame_pos;
        self.detector = detector;
        let gain = self.smoother.gain;
        self.smoother = GainSmoother::new(params.attack_ms, params.release_ms, self.sample_rate);
        self.smoother.gain = gain;
        self.smoother.target = gain;
        self.params = params;
        Ok(())
    }

    /// Zero all state: unity gain, empty accumulators, cleared delay line.
    pub fn reset(&mut self) {
        self.estimator.reset();
        self.detector.reset();
        self.smoother.reset();
        self.delay.reset();
        self.frame_pos = 0;
        self.min_gain = 1.0;
    }

    #[inline(always)]
    pub(crate) fn process_sample(&mut self, x: f64) -> f64 {
        self.estimator.update(x);
        if self.detector.enabled {
            self.detector.update(x);
        }
        if self.frame_pos == 0 {
            let level = self.estimator.level_db();
            let p = compression_gain_db(level, &self.params);
            self.smoother
                .set_target(linear_gain(p), self.detector.triggered());
        }
        self.frame_pos += 1;
        if self.frame_pos == self.hop {
            self.frame_pos = 0;
        }
        let gain = self.smoother.step_sample();
        if gain < self.min_gain {
            self.min_gain = gain;
        }
        self.delay.push_pop(x) * gain
    }

    /// Process `input` into `output` (equal lengths). Output is the delayed
    /// input multiplied by the smoothed gain, sample by sample.
    pub fn process_into(&mut self, input: &[f64], output: &mut [f64]) {
        assert_eq!(input.len(), output.len());
        for (t, &x) in input.iter().enumerate() {
            output[t] = self.process_sample(x);
        }
    }

    /// Process a buffer in place.
    pub fn process_in_place(&mut self, buf: &mut [f64]) {
        for s in buf.iter_mut() {
            *s = self.process_sample(*s);
        }
    }

    /// Allocating convenience wrapper around [`Compressor::process_into`].
    pub fn process(&mut self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        self.process_into(input, &mut out);
        out
    }
}

/// Write the static compression curve as CSV with columns
/// `input_level_db,gain_db,output_level_db`, sweeping -100..0 dB in 0.5 dB
/// steps.
pub fn write_curve_csv<W: Write>(params: &CompressorParams, mut w: W) -> std::io::Result<()> {
    writeln!(w, "input_level_db,gain_db,output_level_db")?;
    for i in 0..=200 {
        let level = -100.0 + 0.5 * i as f64;
        let p = compression_gain_db(level, params);
        writeln!(w, "{level},{p},{}", level + p)?;
    }
    Ok(())
}

/// Fixed-length sample delay line (zero length passes through).
#[derive(Debug, Clone)]
pub(crate) struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
}

impl DelayLine {
    pub fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; len],
            pos: 0,
        }
    }

    pub fn reset(&mut self) {
        self.buf.fill(0.0);
        self.pos = 0;
    }

    #[inline(always)]
    pub fn push_pop(&mut self, x: f64) -> f64 {
        if self.buf.is_empty() {
            return x;
        }
        let y = self.buf[self.pos];
        self.buf[self.pos] = x;
        self.pos += 1;
        if self.pos == self.buf.len() {
            self.pos = 0;
        }
        y
    }
}
