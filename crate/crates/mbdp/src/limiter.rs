//! Look-ahead peak limiter with a hard output ceiling.
//!
//! The gain path is built so the ceiling holds by construction rather than
//! by clipping:
//!
//! 1. per incoming sample, the gain that sample could tolerate:
//!    `e = min(1, threshold / |x|)`;
//! 2. sliding-window minimum of `e` over the look-ahead span, so the
//!    required reduction is known a full look-ahead before the sample
//!    reaches the output;
//! 3. one-pole smoothing applied only upward (release); downward moves
//!    pass through so the bound is kept;
//! 4. a moving average over the attack span, which turns the step from (2)
//!    into a linear ramp that completes before the peak exits the delay
//!    line.
//!
//! Every averaged value is itself a bound for the sample leaving the delay
//! line, so `|output| <= threshold` holds in exact arithmetic; a final
//! clamp (with a counter) absorbs the last-ulp rounding cases. The same
//! type serves as the per-band limiter and the full-band limiter.

use std::io::Write;

use crate::db_to_linear;
use crate::error::Error;
use crate::SampleBuffer;

/// Peak ceiling and envelope timing for one limiter instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LimiterParams {
    /// Ceiling as linear amplitude in (0, 1].
    pub threshold: f64,
    /// Look-ahead delay in samples (>= 1).
    pub lookahead: usize,
    /// Attack ramp length in ms; capped at the look-ahead.
    pub attack_ms: f64,
    /// Release time constant in ms.
    pub release_ms: f64,
}

impl Default for LimiterParams {
    fn default() -> Self {
        Self {
            threshold: db_to_linear(-0.1),
            lookahead: 72,
            attack_ms: 1.0,
            release_ms: 50.0,
        }
    }
}

impl LimiterParams {
    /// Convenience constructor from a dBFS ceiling.
    pub fn with_threshold_dbfs(threshold_dbfs: f64, lookahead: usize) -> Self {
        Self {
            threshold: db_to_linear(threshold_dbfs),
            lookahead,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self, prefix: &str) -> Result<(), Error> {
        let key = |k: &str| format!("{prefix}.{k}");
        if !(self.threshold.is_finite() && self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::config(
                key("threshold_dbfs"),
                format!(
                    "linear threshold must be in (0, 1], got {} (<= 0 dBFS required)",
                    self.threshold
                ),
            ));
        }
        if self.lookahead < 1 {
            return Err(Error::config(
                key("lookahead_ms"),
                "look-ahead must be at least one sample".to_string(),
            ));
        }
        for (name, v) in [
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
        Ok(())
    }
}

/// Sliding-window minimum over the most recent `window` values, O(1)
/// amortized via a monotonic ring of (index, value) pairs. Values are
/// assumed <= 1.0, which lets the pre-history act as an implicit run of
/// ones.
#[derive(Debug, Clone)]
struct SlidingMin {
    window: u64,
    ring: Vec<(u64, f64)>,
    head: usize,
    len: usize,
}

impl SlidingMin {
    fn new(window: usize) -> Self {
        Self {
            window: window as u64,
            ring: vec![(0, 0.0); window],
            head: 0,
            len: 0,
        }
    }

    fn reset(&mut self) {
        self.head = 0;
        self.len = 0;
    }

    #[inline(always)]
    fn push(&mut self, t: u64, v: f64) -> f64 {
        let cap = self.ring.len();
        // Expire the front entry once it falls out of the window.
        while self.len > 0 {
            let (idx, _) = self.ring[self.head];
            if idx + self.window <= t {
                self.head += 1;
                if self.head == cap {
                    self.head = 0;
                }
                self.len -= 1;
            } else {
                break;
            }
        }
        // Drop dominated entries from the back.
        while self.len > 0 {
            let back = (self.head + self.len - 1) % cap;
            if self.ring[back].1 >= v {
                self.len -= 1;
            } else {
                break;
            }
        }
        let slot = (self.head + self.len) % cap;
        self.ring[slot] = (t, v);
        self.len += 1;
        self.ring[self.head].1
    }
}

/// Fixed-length moving average with periodic exact re-summation to stop
/// floating-point drift in the running sum.
#[derive(Debug, Clone)]
struct MovingAverage {
    buf: Vec<f64>,
    pos: usize,
    sum: f64,
    len_f64: f64,
    until_refresh: usize,
}

impl MovingAverage {
    /// All slots start at `fill` (unity gain history for the limiter).
    fn new(len: usize, fill: f64) -> Self {
        Self {
            buf: vec![fill; len],
            pos: 0,
            sum: fill * len as f64,
            len_f64: len as f64,
            until_refresh: len,
        }
    }

    fn reset(&mut self, fill: f64) {
        self.buf.fill(fill);
        self.pos = 0;
        self.sum = fill * self.buf.len() as f64;
        self.until_refresh = self.buf.len();
    }

    #[inline(always)]
    fn push(&mut self, v: f64) -> f64 {
        self.sum += v - self.buf[self.pos];
        self.buf[self.pos] = v;
        self.pos += 1;
        if self.pos == self.buf.len() {
            self.pos = 0;
        }
        self.until_refresh -= 1;
        if self.until_refresh == 0 {
            self.sum = self.buf.iter().sum();
            self.until_refresh = self.buf.len();
        }
        // Division keeps an all-ones history at exactly 1.0.
        self.sum / self.len_f64
    }
}

/// Streaming look-ahead limiter. One instance per band (or one for the
/// full-band stage).
pub struct Limiter {
    params: LimiterParams,
    sample_rate: f64,
    delay: Vec<f64>,
    delay_pos: usize,
    window_min: SlidingMin,
    release_coeff: f64,
    smoothed: f64,
    average: MovingAverage,
    envelope: f64,
    envelope_coeff: f64,
    clock: u64,
    clamped: u64,
    min_gain: f64,
}

impl Limiter {
    pub fn new(params: LimiterParams, sample_rate: f64) -> Result<Self, Error> {
        params.validate("limiter")?;
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::config(
                "sample_rate",
                format!("must be positive and finite, got {sample_rate}"),
            ));
        }
        let lookahead = params.lookahead;
        let attack_samples =
            ((params.attack_ms * 1e-3 * sample_rate).round() as usize).min(lookahead);
        let beta = (-1.0 / (params.release_ms * 1e-3 * sample_rate)).exp();
        Ok(Self {
            delay: vec![0.0; lookahead],
            delay_pos: 0,
            window_min: SlidingMin::new(lookahead + 1),
            release_coeff: beta,
            smoothed: 1.0,
            average: MovingAverage::new(attack_samples + 1, 1.0),
            envelope: 0.0,
            envelope_coeff: beta,
            clock: 0,
            clamped: 0,
            min_gain: 1.0,
            params,
            sample_rate,
        })
    }

    pub fn params(&self) -> &LimiterParams {
        &self.params
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Delay of the audio path, in samples.
    pub fn latency(&self) -> usize {
        self.params.lookahead
    }

    /// Samples touched by the final safety clamp since the last reset.
    pub fn clamped_samples(&self) -> u64 {
        self.clamped
    }

    /// Lowest gain applied since the last reset.
    pub fn min_gain(&self) -> f64 {
        self.min_gain
    }

    /// Replace threshold and timing. The look-ahead must stay the same on a
    /// live instance; the attack ramp and release are rebuilt, audio and
    /// gain state are kept.
    pub fn set_params(&mut self, params: LimiterParams) -> Result<(), Error> {
        params.validate("limiter")?;
        if params.lookahead != self.params.lookahead {
            return Err(Error::config(
                "limiter.lookahead_ms",
                "cannot change look-ahead on a live instance".to_string(),
            ));
        }
        let attack_samples =
            ((params.attack_ms * 1e-3 * self.sample_rate).round() as usize).min(params.lookahead);
        if attack_samples + 1 != self.average.buf.len() {
            self.average = MovingAverage::new(attack_samples + 1, self.smoothed);
        }
        let beta = (-1.0 / (params.release_ms * 1e-3 * self.sample_rate)).exp();
        self.release_coeff = beta;
        self.envelope_coeff = beta;
        self.params = params;
        Ok(())
    }

    /// Zero all state: unity gain, empty envelope, cleared delay line.
    pub fn reset(&mut self) {
        self.delay.fill(0.0);
        self.delay_pos = 0;
        self.window_min.reset();
        self.smoothed = 1.0;
        self.average.reset(1.0);
        self.envelope = 0.0;
        self.clock = 0;
        self.clamped = 0;
        self.min_gain = 1.0;
    }

    #[inline(always)]
    fn gain_for(&mut self, x: f64) -> f64 {
        let ax = x.abs();
        // Peak envelope: instantaneous rise, exponential fall.
        self.envelope = ax.max(self.envelope_coeff * self.envelope);
        // The 1e-12 margin absorbs rounding in the averaging stage so the
        // final clamp almost never has to act; below threshold the gain
        // stays exactly 1.
        let e = if ax > self.params.threshold {
            self.params.threshold / ax * (1.0 - 1e-12)
        } else {
            1.0
        };
        let u = self.window_min.push(self.clock, e);
        self.clock += 1;
        // Upward moves are smoothed by the release; downward moves pass
        // through so the window minimum stays a bound.
        let smoothed = self.release_coeff * self.smoothed + (1.0 - self.release_coeff) * u;
        self.smoothed = if u < smoothed { u } else { smoothed };
        let gain = self.average.push(self.smoothed);
        if gain < self.min_gain {
            self.min_gain = gain;
        }
        gain
    }

    #[inline(always)]
    pub(crate) fn process_sample(&mut self, x: f64) -> f64 {
        let gain = self.gain_for(x);
        let delayed = {
            let y = self.delay[self.delay_pos];
            self.delay[self.delay_pos] = x;
            self.delay_pos += 1;
            if self.delay_pos == self.delay.len() {
                self.delay_pos = 0;
            }
            y
        };
        let out = delayed * gain;
        let t = self.params.threshold;
        if out > t {
            self.clamped += 1;
            t
        } else if out < -t {
            self.clamped += 1;
            -t
        } else {
            out
        }
    }

    /// Process `input` into `output` (equal lengths).
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

    /// Allocating convenience wrapper around [`Limiter::process_into`].
    pub fn process(&mut self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        self.process_into(input, &mut out);
        out
    }

    /// Process while recording the per-sample gain into `gains`.
    pub fn process_traced(&mut self, input: &[f64], output: &mut [f64], gains: &mut Vec<f64>) {
        assert_eq!(input.len(), output.len());
        gains.clear();
        for (t, &x) in input.iter().enumerate() {
            let gain = self.gain_for(x);
            gains.push(gain);
            let delayed = {
                let y = self.delay[self.delay_pos];
                self.delay[self.delay_pos] = x;
                self.delay_pos += 1;
                if self.delay_pos == self.delay.len() {
                    self.delay_pos = 0;
                }
                y
            };
            let out = delayed * gain;
            let thr = self.params.threshold;
            output[t] = if out > thr {
                self.clamped += 1;
                thr
            } else if out < -thr {
                self.clamped += 1;
                -thr
            } else {
                out
            };
        }
    }

    /// Advance only the running peak envelope over `block`, returning the
    /// per-sample envelope: `env[t] = max(|x[t]|, beta * env[t-1])`.
    pub fn peak_envelope(&mut self, block: &[f64]) -> Vec<f64> {
        block
            .iter()
            .map(|&x| {
                self.envelope = x.abs().max(self.envelope_coeff * self.envelope);
                self.envelope
            })
            .collect()
    }
}

/// Write a gain-reduction trace as CSV with columns `sample_index,gain`.
pub fn write_gain_trace_csv<W: Write>(gains: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "sample_index,gain")?;
    for (i, g) in gains.iter().enumerate() {
        writeln!(w, "{i},{g}")?;
    }
    Ok(())
}

/// The M-band limiter: one [`Limiter`] per band, applied independently.
/// All bands must share one look-ahead so they stay time-aligned at the
/// mixer.
pub struct MultibandLimiter {
    limiters: Vec<Limiter>,
}

impl MultibandLimiter {
    pub fn new(params: Vec<LimiterParams>, sample_rate: f64) -> Result<Self, Error> {
        if params.is_empty() {
            return Err(Error::config(
                "bands",
                "at least one band required".to_string(),
            ));
        }
        let lookahead = params[0].lookahead;
        for (i, p) in params.iter().enumerate() {
            p.validate(&format!("bands[{i}].limiter"))?;
            if p.lookahead != lookahead {
                return Err(Error::config(
                    format!("bands[{i}].limiter.lookahead_ms"),
                    format!(
                        "all band limiter look-aheads must match (band 1 has {lookahead} samples, band {} has {})",
                        i + 1,
                        p.lookahead
                    ),
                ));
            }
        }
        let limiters = params
            .into_iter()
            .map(|p| Limiter::new(p, sample_rate))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { limiters })
    }

    pub fn num_bands(&self) -> usize {
        self.limiters.len()
    }

    pub fn limiters(&self) -> &[Limiter] {
        &self.limiters
    }

    pub fn limiters_mut(&mut self) -> &mut [Limiter] {
        &mut self.limiters
    }

    pub fn latency(&self) -> usize {
        self.limiters[0].latency()
    }

    pub fn reset(&mut self) {
        for l in &mut self.limiters {
            l.reset();
        }
    }

    /// Limit each band buffer in place with its own limiter.
    pub fn process_in_place(&mut self, bands: &mut [Vec<f64>]) {
        assert_eq!(bands.len(), self.limiters.len());
        for (l, b) in self.limiters.iter_mut().zip(bands.iter_mut()) {
            l.process_in_place(b);
        }
    }

    /// Limit M band buffers, returning M new buffers.
    pub fn process(&mut self, bands: &[SampleBuffer]) -> Result<Vec<SampleBuffer>, Error> {
        if bands.len() != self.limiters.len() {
            return Err(Error::config(
                "bands",
                format!(
                    "expected {} band buffers, got {}",
                    self.limiters.len(),
                    bands.len()
                ),
            ));
        }
        Ok(self
            .limiters
            .iter_mut()
            .zip(bands)
            .map(|(l, b)| SampleBuffer::new(l.process(b.samples()), b.sample_rate()))
            .collect())
    }
}
