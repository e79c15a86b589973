//! Offline measurement tools: crest factor (PAR), long-term power spectral
//! density, total harmonic distortion, and windowed peak statistics.
//!
//! Everything here is pure and double precision; results are meant for
//! CSV/JSON export and before/after comparisons of processed audio.

use std::io::Write;

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::Serialize;

use crate::error::Error;

/// Peak, RMS, and their ratio (all dB) plus optional spectral results.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub par_db: f64,
    pub peak_dbfs: f64,
    pub rms_dbfs: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub psd: Vec<PsdBin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thd_percent: Option<f64>,
}

/// One one-sided PSD bin.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsdBin {
    pub frequency_hz: f64,
    pub density_db: f64,
}

/// Peak and RMS of one analysis window.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WindowStats {
    pub start_sample: usize,
    pub peak_dbfs: f64,
    pub rms_dbfs: f64,
}

/// THD measurement result. `harmonics_used` can be lower than requested
/// when the higher harmonics would cross Nyquist.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThdReport {
    pub thd_percent: f64,
    pub fundamental_dbfs: f64,
    pub harmonics_used: usize,
    pub harmonics_requested: usize,
}

fn peak_and_rms(signal: &[f64]) -> (f64, f64) {
    let mut peak = 0.0_f64;
    let mut sum_sq = 0.0_f64;
    for &x in signal {
        peak = peak.max(x.abs());
        sum_sq += x * x;
    }
    (peak, (sum_sq / signal.len().max(1) as f64).sqrt())
}

/// Peak-to-average ratio in dB: `20 log10(max|x| / rms(x))`.
pub fn par(signal: &[f64]) -> Result<f64, Error> {
    let (peak, rms) = peak_and_rms(signal);
    if signal.is_empty() || peak == 0.0 {
        return Err(Error::SilentSignal { metric: "PAR" });
    }
    Ok(20.0 * (peak / rms).log10())
}

/// Peak and RMS of the whole signal in dBFS.
pub fn peak_rms_dbfs(signal: &[f64]) -> Result<(f64, f64), Error> {
    let (peak, rms) = peak_and_rms(signal);
    if signal.is_empty() || peak == 0.0 {
        return Err(Error::SilentSignal { metric: "level" });
    }
    Ok((20.0 * peak.log10(), 20.0 * rms.log10()))
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Averaged-periodogram PSD, one-sided, density-normalized so white noise
/// of variance `s^2` reads `10 log10(s^2 * 2 / fs)` flat. Hann window;
/// `overlap_fraction` of 0.5 gives the usual 50% segment overlap. Bins are
/// floored at -200 dB.
pub fn psd_welch(
    signal: &[f64],
    sample_rate: f64,
    segment_length: usize,
    overlap_fraction: f64,
) -> Result<Vec<PsdBin>, Error> {
    if segment_length < 2 {
        return Err(Error::config(
            "segment_length",
            "must be at least 2 samples".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::config(
            "overlap_fraction",
            format!("must be in [0, 1), got {overlap_fraction}"),
        ));
    }
    if signal.len() < segment_length {
        return Err(Error::SignalTooShort {
            needed: segment_length,
            actual: signal.len(),
        });
    }
    let n = segment_length;
    let hop = ((n as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let window = hann(n);
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut accum = vec![0.0_f64; n / 2 + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut segments = 0usize;
    let mut start = 0;
    while start + n <= signal.len() {
        for (b, (&x, &w)) in buf
            .iter_mut()
            .zip(signal[start..start + n].iter().zip(&window))
        {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, acc) in accum.iter_mut().enumerate() {
            *acc += buf[k].norm_sqr();
        }
        segments += 1;
        start += hop;
    }

    let scale = 1.0 / (sample_rate * window_power * segments as f64);
    Ok(accum
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            let density = a * scale * one_sided;
            PsdBin {
                frequency_hz: k as f64 * sample_rate / n as f64,
                density_db: 10.0 * (density + 1e-20).log10(),
            }
        })
        .collect())
}

/// Hann-windowed projection of `signal` onto `e^(-j 2 pi f t)`; returns the
/// complex bin value (window gain not removed).
fn project(signal: &[f64], window: &[f64], omega: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (t, (&x, &w)) in signal.iter().zip(window).enumerate() {
        let (sin, cos) = (-omega * t as f64).sin_cos();
        acc += Complex64::new(cos, sin) * (x * w);
    }
    acc
}

/// Total harmonic distortion of a steady tone at `f0`, as a percentage:
/// `100 * sqrt(sum of harmonic powers) / sqrt(fundamental power)`, with each
/// power taken from a single-frequency windowed projection at `h * f0`.
///
/// Requires at least one second of signal. Harmonics at or above Nyquist
/// are dropped (reflected in `harmonics_used`).
pub fn thd(
    signal: &[f64],
    sample_rate: f64,
    f0: f64,
    n_harmonics: usize,
) -> Result<ThdReport, Error> {
    if !(f0.is_finite() && f0 > 0.0 && f0 < sample_rate / 2.0) {
        return Err(Error::config(
            "f0",
            format!(
                "fundamental must be in (0, {}), got {f0}",
                sample_rate / 2.0
            ),
        ));
    }
    let needed = sample_rate as usize;
    if signal.len() < needed {
        return Err(Error::SignalTooShort {
            needed,
            actual: signal.len(),
        });
    }
    let requested = n_harmonics.max(1);
    let max_h = ((sample_rate / 2.0 - 1e-9) / f0).floor() as usize;
    let used = requested.min(max_h).max(1);

    let window = hann(signal.len());
    let window_sum: f64 = window.iter().sum();
    let omega = 2.0 * std::f64::consts::PI * f0 / sample_rate;

    let fundamental = project(signal, &window, omega);
    let fundamental_amp = 2.0 * fundamental.norm() / window_sum;
    let fundamental_dbfs = 20.0 * (fundamental_amp + 1e-30).log10();
    if fundamental_dbfs < -100.0 {
        return Err(Error::NoFundamental {
            f0,
            level_db: fundamental_dbfs,
        });
    }

    let mut harmonic_power = 0.0;
    for h in 2..=used {
        let c = project(signal, &window, omega * h as f64);
        harmonic_power += c.norm_sqr();
    }
    let thd_percent = 100.0 * (harmonic_power / fundamental.norm_sqr()).sqrt();
    Ok(ThdReport {
        thd_percent,
        fundamental_dbfs,
        harmonics_used: used,
        harmonics_requested: requested,
    })
}

/// Peak and RMS per non-overlapping window of `window_ms`. A trailing
/// partial window is included.
pub fn peak_stats(
    signal: &[f64],
    sample_rate: f64,
    window_ms: f64,
) -> Result<Vec<WindowStats>, Error> {
    if !(window_ms.is_finite() && window_ms > 0.0) {
        return Err(Error::config(
            "window_ms",
            format!("must be positive, got {window_ms}"),
        ));
    }
    let w = ((window_ms * 1e-3 * sample_rate).round() as usize).max(1);
    Ok(signal
        .chunks(w)
        .enumerate()
        .map(|(i, chunk)| {
            let (peak, rms) = peak_and_rms(chunk);
            WindowStats {
                start_sample: i * w,
                peak_dbfs: 20.0 * (peak + 1e-30).log10(),
                rms_dbfs: 20.0 * (rms + 1e-30).log10(),
            }
        })
        .collect())
}

/// Full report: peak/RMS/PAR, optionally a PSD and a THD measurement.
pub fn report(
    signal: &[f64],
    sample_rate: f64,
    psd: Option<(usize, f64)>,
    thd_at: Option<(f64, usize)>,
) -> Result<AnalysisReport, Error> {
    let par_db = par(signal)?;
    let (peak_dbfs, rms_dbfs) = peak_rms_dbfs(signal)?;
    let psd = match psd {
        Some((seg, overlap)) => psd_welch(signal, sample_rate, seg, overlap)?,
        None => Vec::new(),
    };
    let thd_percent = match thd_at {
        Some((f0, n)) => Some(thd(signal, sample_rate, f0, n)?.thd_percent),
        None => None,
    };
    Ok(AnalysisReport {
        par_db,
        peak_dbfs,
        rms_dbfs,
        psd,
        thd_percent,
    })
}

/// CSV with columns `frequency_hz,density_db`.
pub fn write_psd_csv<W: Write>(psd: &[PsdBin], mut w: W) -> std::io::Result<()> {
    writeln!(w, "frequency_hz,density_db")?;
    for bin in psd {
        writeln!(w, "{},{}", bin.frequency_hz, bin.density_db)?;
    }
    Ok(())
}

/// CSV with columns `start_sample,peak_dbfs,rms_dbfs`.
pub fn write_peak_stats_csv<W: Write>(stats: &[WindowStats], mut w: W) -> std::io::Result<()> {
    writeln!(w, "start_sample,peak_dbfs,rms_dbfs")?;
    for s in stats {
        writeln!(w, "{},{},{}", s.start_sample, s.peak_dbfs, s.rms_dbfs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const FS: f64 = 48000.0;

    fn sine(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| amp * (2.0 * std::f64::consts::PI * freq * t as f64 / FS).sin())
            .collect()
    }

    #[test]
    fn par_square_wave_is_zero() {
        let square: Vec<f64> = (0..4096)
            .map(|t| if t % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert!(par(&square).unwrap().abs() < 1e-12);
    }

    #[test]
    fn par_sine_is_crest_factor() {
        // fs/4 tone hits the exact crest on samples: 0, 1, 0, -1, ...
        let x = sine(FS / 4.0, 1.0, 4096);
        let got = par(&x).unwrap();
        assert!((got - 3.010299956639812).abs() < 1e-6, "PAR {got}");
    }

    #[test]
    fn par_impulse_in_zeros() {
        for n in [64usize, 1024, 48000] {
            let mut x = vec![0.0; n];
            x[n / 2] = 1.0;
            let got = par(&x).unwrap();
            let expected = 10.0 * (n as f64).log10();
            assert!((got - expected).abs() < 1e-9, "n={n}: {got} vs {expected}");
        }
    }

    #[test]
    fn par_rejects_silence() {
        assert!(matches!(
            par(&vec![0.0; 128]),
            Err(Error::SilentSignal { .. })
        ));
        assert!(par(&[]).is_err());
    }

    #[test]
    fn par_is_gain_invariant() {
        let x: Vec<f64> = (0..8192)
            .map(|t| ((t as f64) * 0.01).sin() + 0.2 * ((t as f64) * 0.13).cos())
            .collect();
        let a = par(&x).unwrap();
        for gain in [0.001, 0.5, 3.0, -2.0] {
            let scaled: Vec<f64> = x.iter().map(|&s| s * gain).collect();
            let b = par(&scaled).unwrap();
            assert!((a - b).abs() < 1e-9, "gain {gain}: {a} vs {b}");
        }
    }

    #[test]
    fn psd_white_noise_is_flat_at_density() {
        // Unit-variance white noise must read 10 log10(2 / fs) everywhere.
        let mut rng = StdRng::seed_from_u64(0x5eed);
        let x: Vec<f64> = (0..480000)
            .map(|_| {
                // Sum of 12 uniforms: variance 1, near-Gaussian.
                (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
            })
            .collect();
        let psd = psd_welch(&x, FS, 2048, 0.5).unwrap();
        let expected = 10.0 * (2.0 / FS).log10();
        for bin in psd
            .iter()
            .filter(|b| b.frequency_hz > 100.0 && b.frequency_hz < 20000.0)
        {
            assert!(
                (bin.density_db - expected).abs() < 1.0,
                "{} Hz: {} dB vs {expected} dB",
                bin.frequency_hz,
                bin.density_db
            );
        }
    }

    #[test]
    fn psd_parseval_energy_matches_variance() {
        let mut rng = StdRng::seed_from_u64(42);
        let x: Vec<f64> = (0..480000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let variance = x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64;
        let psd = psd_welch(&x, FS, 4096, 0.5).unwrap();
        let df = FS / 4096.0;
        let total: f64 = psd
            .iter()
            .map(|b| 10.0_f64.powf(b.density_db / 10.0) * df)
            .sum();
        assert!(
            (total - variance).abs() / variance < 0.01,
            "sum {total} vs variance {variance}"
        );
    }

    #[test]
    fn psd_sine_peaks_at_bin_center() {
        let n = 4096;
        // Exact bin center: k = 100 -> 100 * fs / n.
        let f0 = 100.0 * FS / n as f64;
        let x = sine(f0, 0.5, 480000);
        let psd = psd_welch(&x, FS, n, 0.5).unwrap();
        let peak = psd[100].density_db;
        // Hann leakage is confined to +/-1 bin; everything beyond is floor.
        for k in [95usize, 97, 103, 105, 200, 1000] {
            assert!(
                peak - psd[k].density_db >= 40.0,
                "bin {k} only {} dB below peak",
                peak - psd[k].density_db
            );
        }
    }

    #[test]
    fn psd_zero_signal_hits_floor() {
        let psd = psd_welch(&vec![0.0; 48000], FS, 1024, 0.5).unwrap();
        assert!(psd.iter().all(|b| (b.density_db + 200.0).abs() < 1e-9));
    }

    #[test]
    fn psd_rejects_short_signal() {
        assert!(matches!(
            psd_welch(&vec![0.0; 100], FS, 1024, 0.5),
            Err(Error::SignalTooShort { .. })
        ));
    }

    #[test]
    fn thd_pure_sine_is_negligible() {
        let x = sine(997.0, 0.8, 48000);
        let r = thd(&x, FS, 997.0, 10).unwrap();
        assert!(r.thd_percent < 0.001, "THD {}", r.thd_percent);
    }

    #[test]
    fn thd_second_harmonic_at_minus_40db() {
        let n = 96000;
        let x: Vec<f64> = (0..n)
            .map(|t| {
                let w = 2.0 * std::f64::consts::PI * 500.0 * t as f64 / FS;
                0.5 * w.sin() + 0.005 * (2.0 * w).sin()
            })
            .collect();
        let r = thd(&x, FS, 500.0, 10).unwrap();
        assert!(
            (r.thd_percent - 1.0).abs() < 0.01,
            "THD {} %",
            r.thd_percent
        );
    }

    #[test]
    fn thd_is_gain_and_phase_invariant() {
        let n = 96000;
        let make = |gain: f64, phase: f64| -> Vec<f64> {
            (0..n)
                .map(|t| {
                    let w = 2.0 * std::f64::consts::PI * 500.0 * t as f64 / FS;
                    gain * (0.5 * (w + phase).sin() + 0.01 * (2.0 * w + 0.7).sin())
                })
                .collect()
        };
        let a = thd(&make(1.0, 0.0), FS, 500.0, 5).unwrap().thd_percent;
        let b = thd(&make(0.1, 1.3), FS, 500.0, 5).unwrap().thd_percent;
        assert!((a - b).abs() / a < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn thd_caps_harmonics_below_nyquist() {
        let x = sine(9000.0, 0.5, 48000);
        let r = thd(&x, FS, 9000.0, 10).unwrap();
        // 9 kHz: only h = 1 and 2 fit below 24 kHz.
        assert_eq!(r.harmonics_used, 2);
        assert_eq!(r.harmonics_requested, 10);
    }

    #[test]
    fn thd_requires_a_fundamental() {
        let x = sine(1000.0, 0.5, 48000);
        // Ask at a frequency with no tone.
        assert!(matches!(
            thd(&x, FS, 3000.0, 5),
            Err(Error::NoFundamental { .. })
        ));
    }

    #[test]
    fn thd_clipped_sine_matches_fft_oracle() {
        // f0 = 375 Hz lands exactly on bin 1024 of a 131072-point FFT at
        // 48 kHz, so a rectangular periodogram reads harmonic powers with
        // no leakage.
        let n = 131072;
        let f0 = 375.0;
        let x: Vec<f64> = (0..n)
            .map(|t| {
                let s = 0.9 * (2.0 * std::f64::consts::PI * f0 * t as f64 / FS).sin();
                s.clamp(-0.45, 0.45)
            })
            .collect();
        let r = thd(&x, FS, f0, 20).unwrap();

        let mut buf: Vec<Complex64> = x.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let bin = 1024;
        let p1 = buf[bin].norm_sqr();
        let ph: f64 = (2..=20).map(|h| buf[bin * h].norm_sqr()).sum();
        let oracle = 100.0 * (ph / p1).sqrt();
        assert!(
            (r.thd_percent - oracle).abs() / oracle < 0.02,
            "impl {} vs oracle {oracle}",
            r.thd_percent
        );
    }

    #[test]
    fn peak_stats_constant_signal() {
        let stats = peak_stats(&vec![0.25; 4800], FS, 10.0).unwrap();
        assert_eq!(stats.len(), 10);
        let expected = 20.0 * 0.25_f64.log10();
        for s in stats {
            assert!((s.peak_dbfs - expected).abs() < 1e-9);
            assert!((s.rms_dbfs - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn peak_stats_localizes_a_burst() {
        let mut x = vec![0.01; 48000];
        // Full-scale burst in the third 10 ms window.
        for s in &mut x[960..1440] {
            *s = 1.0;
        }
        let stats = peak_stats(&x, FS, 10.0).unwrap();
        for (i, s) in stats.iter().enumerate() {
            if i == 2 {
                assert!(s.peak_dbfs.abs() < 1e-12, "window {i} should be 0 dBFS");
            } else {
                assert!(s.peak_dbfs < -39.0, "window {i} peak {}", s.peak_dbfs);
            }
        }
    }

    #[test]
    fn report_combines_metrics() {
        let x = sine(FS / 4.0, 0.5, 48000);
        let r = report(&x, FS, Some((1024, 0.5)), Some((FS / 4.0, 1))).unwrap();
        assert!((r.par_db - (r.peak_dbfs - r.rms_dbfs)).abs() < 1e-12);
        assert!(r.par_db >= 0.0);
        assert!(!r.psd.is_empty());
        assert!(r.thd_percent.is_some());
    }

    #[test]
    fn csv_writers() {
        let psd = vec![
            PsdBin {
                frequency_hz: 0.0,
                density_db: -100.0,
            },
            PsdBin {
                frequency_hz: 46.875,
                density_db: -43.2,
            },
        ];
        let mut out = Vec::new();
        write_psd_csv(&psd, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("frequency_hz,density_db\n"));
        assert_eq!(text.lines().count(), 3);

        let stats = peak_stats(&vec![0.5; 960], FS, 10.0).unwrap();
        let mut out = Vec::new();
        write_peak_stats_csv(&stats, &mut out).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("start_sample,peak_dbfs,rms_dbfs\n"));
    }

    #[test]
    fn peak_stats_respect_a_limiter_ceiling() {
        use crate::limiter::{Limiter, LimiterParams};
        let threshold = 0.3;
        let mut limiter = Limiter::new(
            LimiterParams {
                threshold,
                ..LimiterParams::default()
            },
            FS,
        )
        .unwrap();
        let hot = sine(440.0, 1.0, 48000);
        let limited = limiter.process(&hot);
        let ceiling_db = 20.0 * threshold.log10();
        for w in peak_stats(&limited, FS, 10.0).unwrap() {
            assert!(
                w.peak_dbfs <= ceiling_db + 1e-12,
                "window at {}: {} dBFS",
                w.start_sample,
                w.peak_dbfs
            );
        }
    }
}
