//! Reconfigurable M-band crossover filterbank.
//!
//! Band `i` (1-indexed) of an M-band split is the input filtered through
//!
//! ```text
//! HP(fc_1)^2, ..., HP(fc_{i-1})^2, LP(fc_i)^2, AP(fc_{i+1}), ..., AP(fc_{M-1})
//! ```
//!
//! with band M carrying all the high-pass pairs and no low-pass. Every
//! chain therefore contains, per crossover, exactly one of {LP pair,
//! HP pair, single AP}, and since all three contribute the same phase at
//! that crossover the bands stay mutually in phase. Summing the bands
//! telescopes to the product of all the all-passes, so the reconstruction
//! is magnitude-flat to machine precision for any valid spec.
//!
//! Crossover frequencies, bandwidths, and the band count are all set by
//! [`CrossoverSpec`]; building a new splitter from a changed spec is the
//! supported reconfiguration path (filter state starts from zero).

use std::io::Write;

use num_complex::Complex64;

use crate::biquad::{design_allpass, design_highpass, design_lowpass, Biquad, BiquadCoeffs};
use crate::error::Error;
use crate::SampleBuffer;

/// Crossover layout of an M-band filterbank: the sample rate and the
/// ordered crossover frequencies `fc_1 < fc_2 < ... < fc_{M-1}`.
///
/// `M = crossovers.len() + 1`; an empty list means a single pass-through
/// band.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverSpec {
    pub sample_rate: f64,
    pub crossovers: Vec<f64>,
}

impl CrossoverSpec {
    pub fn new(sample_rate: f64, crossovers: Vec<f64>) -> Result<Self, Error> {
        let spec = Self {
            sample_rate,
            crossovers,
        };
        spec.validate("crossover_hz")?;
        Ok(spec)
    }

    /// Number of bands this crossover layout produces.
    pub fn num_bands(&self) -> usize {
        self.crossovers.len() + 1
    }

    /// Check ordering and range, reporting errors against `key` so config
    /// loading can name the exact offending entry.
    pub(crate) fn validate(&self, key: &str) -> Result<(), Error> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::config(
                "sample_rate",
                format!("must be positive and finite, got {}", self.sample_rate),
            ));
        }
        let nyquist = self.sample_rate / 2.0;
        let mut prev = 0.0;
        for (i, &fc) in self.crossovers.iter().enumerate() {
            if !(fc.is_finite() && fc > 0.0 && fc < nyquist) {
                return Err(Error::config(
                    format!("{key}[{i}]"),
                    format!("crossover frequency {fc} Hz outside (0, {nyquist}) Hz"),
                ));
            }
            if fc <= prev {
                return Err(Error::config(
                    format!("{key}[{i}]"),
                    format!(
                        "crossover frequencies must be strictly increasing ({fc} after {prev})"
                    ),
                ));
            }
            prev = fc;
        }
        Ok(())
    }
}

/// Role of one section inside a band chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Lowpass,
    Highpass,
    Allpass,
}

/// One designed section of a band chain: what it is, where it sits, and its
/// coefficients.
#[derive(Debug, Clone)]
pub struct Section {
    pub kind: SectionKind,
    pub fc: f64,
    pub coeffs: BiquadCoeffs,
}

struct BandChain {
    sections: Vec<Biquad>,
    layout: Vec<Section>,
}

/// Streaming M-band splitter. One instance per audio stream; state persists
/// across [`BandSplitter::split`] calls so arbitrary block sizes produce
/// identical output.
pub struct BandSplitter {
    spec: CrossoverSpec,
    bands: Vec<BandChain>,
}

impl BandSplitter {
    /// Design all band chains for `spec`.
    pub fn new(spec: CrossoverSpec) -> Result<Self, Error> {
        spec.validate("crossover_hz")?;
        let fs = spec.sample_rate;
        let m = spec.num_bands();
        let mut bands = Vec::with_capacity(m);
        for band in 0..m {
            let mut layout = Vec::new();
            for (j, &fc) in spec.crossovers.iter().enumerate() {
                if j < band {
                    let coeffs = design_highpass(fc, fs)?;
                    layout.push(Section {
                        kind: SectionKind::Highpass,
                        fc,
                        coeffs,
                    });
                    layout.push(Section {
                        kind: SectionKind::Highpass,
                        fc,
                        coeffs,
                    });
                } else if j == band {
                    let coeffs = design_lowpass(fc, fs)?;
                    layout.push(Section {
                        kind: SectionKind::Lowpass,
                        fc,
                        coeffs,
                    });
                    layout.push(Section {
                        kind: SectionKind::Lowpass,
                        fc,
                        coeffs,
                    });
                } else {
                    let coeffs = design_allpass(fc, fs)?;
                    layout.push(Section {
                        kind: SectionKind::Allpass,
                        fc,
                        coeffs,
                    });
                }
            }
            let sections = layout.iter().map(|s| Biquad::new(s.coeffs)).collect();
            bands.push(BandChain { sections, layout });
        }
        Ok(Self { spec, bands })
    }

    pub fn spec(&self) -> &CrossoverSpec {
        &self.spec
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    /// The designed section layout of one band, low to high.
    pub fn band_layout(&self, band: usize) -> Result<&[Section], Error> {
        self.bands
            .get(band)
            .map(|b| b.layout.as_slice())
            .ok_or(Error::BandIndexOutOfRange {
                index: band,
                bands: self.bands.len(),
            })
    }

    /// Zero all filter state.
    pub fn reset(&mut self) {
        for band in &mut self.bands {
            for s in &mut band.sections {
                s.reset();
            }
        }
    }

    /// Split a block into `M` per-band buffers (allocating convenience
    /// wrapper around [`BandSplitter::split_into`]).
    pub fn split(&mut self, block: &SampleBuffer) -> Result<Vec<SampleBuffer>, Error> {
        if block.sample_rate() != self.spec.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.spec.sample_rate,
                actual: block.sample_rate(),
            });
        }
        let mut out: Vec<Vec<f64>> = (0..self.num_bands())
            .map(|_| vec![0.0; block.len()])
            .collect();
        self.split_into(block.samples(), &mut out);
        Ok(out
            .into_iter()
            .map(|v| SampleBuffer::new(v, self.spec.sample_rate))
            .collect())
    }

    /// Split `input` into the caller's per-band buffers. Allocation-free:
    /// each output is resized only if shorter than the input (growth counts
    /// as warm-up). `outputs.len()` must equal the band count.
    pub fn split_into(&mut self, input: &[f64], outputs: &mut [Vec<f64>]) {
        assert_eq!(
            outputs.len(),
            self.bands.len(),
            "output buffer count must match band count"
        );
        for (band, out) in self.bands.iter_mut().zip(outputs.iter_mut()) {
            if out.len() < input.len() {
                out.resize(input.len(), 0.0);
            }
            for (t, &x) in input.iter().enumerate() {
                let mut y = x;
                for s in &mut band.sections {
                    y = s.process(y);
                }
                out[t] = y;
            }
        }
    }

    /// Evaluate band `band`'s chained transfer function at each frequency
    /// of `grid_hz`.
    pub fn frequency_response(
        &self,
        band: usize,
        grid_hz: &[f64],
    ) -> Result<Vec<Complex64>, Error> {
        let chain = self.band_layout(band)?;
        let fs = self.spec.sample_rate;
        Ok(grid_hz
            .iter()
            .map(|&f| {
                chain.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
                    acc * s.coeffs.response(f, fs)
                })
            })
            .collect())
    }

    /// Sum of all band responses at each grid frequency (the reconstruction
    /// transfer function; magnitude-flat by construction).
    pub fn sum_response(&self, grid_hz: &[f64]) -> Vec<Complex64> {
        let mut sum = vec![Complex64::new(0.0, 0.0); grid_hz.len()];
        for band in 0..self.num_bands() {
            let r = self.frequency_response(band, grid_hz).expect("valid band");
            for (acc, v) in sum.iter_mut().zip(r) {
                *acc += v;
            }
        }
        sum
    }

    /// Write the per-band and summed responses over `grid_hz` as CSV with
    /// columns `frequency_hz,band_index,magnitude_db,phase_rad`. The summed
    /// response uses `sum` in the band column.
    pub fn write_response_csv<W: Write>(&self, grid_hz: &[f64], mut w: W) -> std::io::Result<()> {
        writeln!(w, "frequency_hz,band_index,magnitude_db,phase_rad")?;
        for band in 0..self.num_bands() {
            let resp = self.frequency_response(band, grid_hz).expect("valid band");
            for (&f, h) in grid_hz.iter().zip(resp) {
                writeln!(
                    w,
                    "{f},{},{},{}",
                    band + 1,
                    20.0 * h.norm().log10(),
                    h.arg()
                )?;
            }
        }
        for (&f, h) in grid_hz.iter().zip(self.sum_response(grid_hz)) {
            writeln!(w, "{f},sum,{},{}", 20.0 * h.norm().log10(), h.arg())?;
        }
        Ok(())
    }
}

/// Log-spaced frequency grid of `points` values over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && lo > 0.0 && hi > lo);
    let ratio = (hi / lo).ln();
    (0..points)
        .map(|i| lo * (ratio * i as f64 / (points - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 48000.0;

    fn spec(crossovers: &[f64]) -> CrossoverSpec {
        CrossoverSpec::new(FS, crossovers.to_vec()).unwrap()
    }

    fn buf(samples: Vec<f64>) -> SampleBuffer {
        SampleBuffer::new(samples, FS)
    }

    #[test]
    fn spec_validation() {
        assert!(CrossoverSpec::new(FS, vec![]).is_ok());
        assert!(CrossoverSpec::new(FS, vec![70.0, 375.0, 3750.0]).is_ok());
        assert!(CrossoverSpec::new(FS, vec![375.0, 70.0]).is_err());
        assert!(CrossoverSpec::new(FS, vec![100.0, 100.0]).is_err());
        assert!(CrossoverSpec::new(FS, vec![0.0]).is_err());
        assert!(CrossoverSpec::new(FS, vec![24000.0]).is_err());
        assert!(CrossoverSpec::new(-1.0, vec![100.0]).is_err());
    }

    #[test]
    fn single_band_is_pass_through() {
        let mut fb = BandSplitter::new(spec(&[])).unwrap();
        let x: Vec<f64> = (0..256).map(|t| (t as f64 * 0.1).sin()).collect();
        let bands = fb.split(&buf(x.clone())).unwrap();
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0].samples(), &x[..]);
    }

    #[test]
    fn two_band_layout_has_no_allpass() {
        let fb = BandSplitter::new(spec(&[1000.0])).unwrap();
        let low = fb.band_layout(0).unwrap();
        let high = fb.band_layout(1).unwrap();
        assert_eq!(low.len(), 2);
        assert!(low
            .iter()
            .all(|s| s.kind == SectionKind::Lowpass && s.fc == 1000.0));
        assert_eq!(high.len(), 2);
        assert!(high
            .iter()
            .all(|s| s.kind == SectionKind::Highpass && s.fc == 1000.0));
    }

    #[test]
    fn four_band_layout_matches_tree() {
        let fb = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        let kinds = |b: usize| -> Vec<(SectionKind, f64)> {
            fb.band_layout(b)
                .unwrap()
                .iter()
                .map(|s| (s.kind, s.fc))
                .collect()
        };
        use SectionKind::*;
        assert_eq!(
            kinds(0),
            vec![
                (Lowpass, 70.0),
                (Lowpass, 70.0),
                (Allpass, 375.0),
                (Allpass, 3750.0)
            ]
        );
        assert_eq!(
            kinds(1),
            vec![
                (Highpass, 70.0),
                (Highpass, 70.0),
                (Lowpass, 375.0),
                (Lowpass, 375.0),
                (Allpass, 3750.0)
            ]
        );
        assert_eq!(
            kinds(3),
            vec![
                (Highpass, 70.0),
                (Highpass, 70.0),
                (Highpass, 375.0),
                (Highpass, 375.0),
                (Highpass, 3750.0),
                (Highpass, 3750.0)
            ]
        );
    }

    #[test]
    fn zero_block_gives_zero_bands() {
        let mut fb = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        let bands = fb.split(&buf(vec![0.0; 512])).unwrap();
        for b in bands {
            assert!(b.samples().iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn sample_rate_mismatch_is_rejected() {
        let mut fb = BandSplitter::new(spec(&[1000.0])).unwrap();
        let block = SampleBuffer::new(vec![0.0; 16], 44100.0);
        assert!(matches!(
            fb.split(&block),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn dc_input_settles_into_band_one() {
        let mut fb = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        // Constant 0.5 for two seconds; high bands must decay below -100 dBFS.
        let bands = fb.split(&buf(vec![0.5; 96000])).unwrap();
        let tail = 95000;
        for (i, b) in bands.iter().enumerate().skip(1) {
            let peak = b.samples()[tail..]
                .iter()
                .fold(0.0_f64, |m, &s| m.max(s.abs()));
            assert!(
                20.0 * peak.log10() < -100.0,
                "band {} tail peak {peak}",
                i + 1
            );
        }
        let b1 = bands[0].samples()[tail..]
            .iter()
            .fold(0.0_f64, |m, &s| m.max(s.abs()));
        assert!((b1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn flat_sum_on_symbolic_responses() {
        let fb = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        let grid = log_grid(20.0, FS / 2.0 * 0.95, 1024);
        for h in fb.sum_response(&grid) {
            assert!((h.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_sum_via_impulse_response_fft() {
        // Independent route: push an impulse through the streaming split,
        // sum the bands, and FFT the measured impulse response.
        use rustfft::{num_complex::Complex64 as C, FftPlanner};
        let n = 1 << 17;
        let mut fb = BandSplitter::new(spec(&[1000.0])).unwrap();
        let mut impulse = vec![0.0; n];
        impulse[0] = 1.0;
        let bands = fb.split(&buf(impulse)).unwrap();
        let mut buf_fft: Vec<C> = (0..n)
            .map(|t| C::new(bands[0].samples()[t] + bands[1].samples()[t], 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf_fft);
        for (k, v) in buf_fft.iter().enumerate().take(n / 2) {
            let f = k as f64 * FS / n as f64;
            if !(20.0..=20000.0).contains(&f) {
                continue;
            }
            let db = 20.0 * v.norm().log10();
            assert!(db.abs() < 1e-4, "{f} Hz: {db} dB");
        }
    }

    #[test]
    fn cascaded_pair_is_6db_down_at_crossover() {
        // Each LP and HP pair sits at twice the half-power attenuation.
        let fb = BandSplitter::new(spec(&[1000.0])).unwrap();
        for band in 0..2 {
            let h = fb.frequency_response(band, &[1000.0]).unwrap()[0];
            let db = 20.0 * h.norm().log10();
            assert!(
                (db + 6.020599913279624).abs() < 0.01,
                "band {band}: {db} dB at fc"
            );
        }
    }

    #[test]
    fn splitter_can_move_between_threads() {
        let mut fb = BandSplitter::new(spec(&[1000.0])).unwrap();
        fb.split(&buf(vec![0.5; 64])).unwrap();
        let handle = std::thread::spawn(move || fb.split(&buf(vec![0.5; 64])).unwrap().len());
        assert_eq!(handle.join().unwrap(), 2);
    }

    #[test]
    fn band_one_dc_gain_is_unity() {
        let fb = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        let r = fb.frequency_response(0, &[0.0]).unwrap();
        assert!((r[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_two_peaks_between_its_crossovers() {
        let fb = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        let grid = log_grid(20.0, 20000.0, 2048);
        let mags: Vec<f64> = fb
            .frequency_response(1, &grid)
            .unwrap()
            .iter()
            .map(|h| h.norm())
            .collect();
        let peak_idx = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let peak_f = grid[peak_idx];
        assert!(
            (70.0..375.0).contains(&peak_f),
            "band 2 peak at {peak_f} Hz"
        );
    }

    #[test]
    fn band_index_out_of_range() {
        let fb = BandSplitter::new(spec(&[1000.0])).unwrap();
        assert!(matches!(
            fb.frequency_response(2, &[100.0]),
            Err(Error::BandIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn adjacent_bands_in_phase_at_crossovers() {
        let fb = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        for (i, &fc) in fb.spec().crossovers.iter().enumerate() {
            let a = fb.frequency_response(i, &[fc]).unwrap()[0];
            let b = fb.frequency_response(i + 1, &[fc]).unwrap()[0];
            let dphi = (a / b).arg();
            assert!(dphi.abs() < 1e-6, "fc={fc} dphi={dphi}");
        }
    }

    #[test]
    fn splitting_is_linear() {
        let mut fb1 = BandSplitter::new(spec(&[300.0, 3000.0])).unwrap();
        let mut fb2 = BandSplitter::new(spec(&[300.0, 3000.0])).unwrap();
        let x: Vec<f64> = (0..2048)
            .map(|t| (t as f64 * 0.013).sin() + 0.3 * (t as f64 * 0.71).cos())
            .collect();
        let scaled: Vec<f64> = x.iter().map(|&s| s * 0.25).collect();
        let a = fb1.split(&buf(x)).unwrap();
        let b = fb2.split(&buf(scaled)).unwrap();
        for (ba, bb) in a.iter().zip(&b) {
            for (&ya, &yb) in ba.samples().iter().zip(bb.samples()) {
                assert!((ya * 0.25 - yb).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn streaming_equivalence_across_block_sizes() {
        let mut whole = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        let mut chopped = BandSplitter::new(spec(&[70.0, 375.0, 3750.0])).unwrap();
        let x: Vec<f64> = (0..48000)
            .map(|t| (t as f64 * 0.0137).sin() * (t as f64 * 0.0014).cos())
            .collect();
        let a = whole.split(&buf(x.clone())).unwrap();
        let mut parts: Vec<Vec<f64>> = vec![Vec::new(); 4];
        for chunk in x.chunks(128) {
            let bs = chopped.split(&buf(chunk.to_vec())).unwrap();
            for (acc, b) in parts.iter_mut().zip(bs) {
                acc.extend_from_slice(b.samples());
            }
        }
        for (ba, bb) in a.iter().zip(&parts) {
            for (&ya, &yb) in ba.samples().iter().zip(bb.iter()) {
                assert!((ya - yb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let fb = BandSplitter::new(spec(&[1000.0])).unwrap();
        let grid = log_grid(10.0, 20000.0, 16);
        let mut out = Vec::new();
        fb.write_response_csv(&grid, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "frequency_hz,band_index,magnitude_db,phase_rad"
        );
        // 2 bands + sum, 16 rows each.
        assert_eq!(text.lines().count(), 1 + 3 * 16);
        assert!(text.lines().any(|l| l.contains(",sum,")));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            // Any valid spec reconstructs magnitude-flat.
            #[test]
            fn sum_is_magnitude_flat(octaves in prop::collection::vec(5.0..14.4f64, 1..7)) {
                let mut crossovers: Vec<f64> =
                    octaves.iter().map(|&o| 2.0_f64.powf(o)).collect();
                crossovers.sort_by(|a, b| a.partial_cmp(b).unwrap());
                crossovers.dedup_by(|a, b| (*a - *b).abs() < 1.0);
                let fb = BandSplitter::new(spec(&crossovers)).unwrap();
                let grid = log_grid(20.0, FS / 2.0 * 0.95, 256);
                for h in fb.sum_response(&grid) {
                    let db = 20.0 * h.norm().log10();
                    prop_assert!(db.abs() < 1e-3, "{crossovers:?}: {db} dB");
                }
            }
        }
    }
}
