//! Second-order IIR sections and the crossover filter designs built on them.
//!
//! Three designs are provided, all derived from the analog second-order
//! Butterworth prototype (Q = 1/sqrt(2)) through the bilinear transform with
//! frequency pre-warping so the crossover frequency maps exactly:
//!
//! * low-pass  `1 / (s^2 + sqrt(2) s + 1)`
//! * high-pass `s^2 / (s^2 + sqrt(2) s + 1)`
//! * all-pass  `(s^2 - sqrt(2) s + 1) / (s^2 + sqrt(2) s + 1)`
//!
//! The all-pass is not arbitrary: squaring the low-pass and high-pass and
//! summing gives `(1 + s^4) / (s^2 + sqrt(2) s + 1)^2`, whose numerator
//! factors as `(s^2 + sqrt(2) s + 1)(s^2 - sqrt(2) s + 1)`, so
//! `LP^2 + HP^2` collapses to exactly that all-pass. The bilinear transform
//! is a rational substitution, so the identity carries to the discrete
//! filters unchanged. This is what lets a crossover tree replace a
//! `LP^2`/`HP^2` pair with a single all-pass in bands that only need the
//! phase contribution, keeping every band phase-aligned.

use num_complex::Complex64;

use crate::error::Error;

/// Coefficients of one second-order section, denominator normalized so
/// `a0 = 1`:
///
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Pre-warped bilinear-transform intermediates shared by all three designs.
///
/// Computing these once per (fc, fs) pair keeps the rounded values
/// bit-identical across the low-pass, high-pass, and all-pass built at the
/// same crossover, which is what makes the `LP^2 + HP^2 = AP` identity hold
/// to machine precision in the discrete domain.
struct Prewarp {
    k2: f64,
    sqrt2_k: f64,
    norm: f64,
}

fn prewarp(fc: f64, fs: f64) -> Result<Prewarp, Error> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::config(
            "sample_rate",
            format!("must be positive and finite, got {fs}"),
        ));
    }
    if !(fc.is_finite() && fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::config(
            "crossover_hz",
            format!("crossover frequency {fc} Hz outside (0, {}) Hz", fs / 2.0),
        ));
    }
    let k = (std::f64::consts::PI * fc / fs).tan();
    let k2 = k * k;
    let sqrt2_k = std::f64::consts::SQRT_2 * k;
    let norm = 1.0 / (1.0 + sqrt2_k + k2);
    Ok(Prewarp { k2, sqrt2_k, norm })
}

/// Second-order Butterworth low-pass at `fc`. Unity gain at DC, a double
/// zero at Nyquist, and -3.01 dB at `fc` exactly (pre-warped).
pub fn design_lowpass(fc: f64, fs: f64) -> Result<BiquadCoeffs, Error> {
    let Prewarp { k2, sqrt2_k, norm } = prewarp(fc, fs)?;
    Ok(BiquadCoeffs {
        b0: k2 * norm,
        b1: 2.0 * k2 * norm,
        b2: k2 * norm,
        a1: 2.0 * (k2 - 1.0) * norm,
        a2: (1.0 - sqrt2_k + k2) * norm,
    })
}

/// Second-order Butterworth high-pass at `fc`. Mirror of [`design_lowpass`]:
/// unity at Nyquist, a double zero at DC, -3.01 dB at `fc`.
pub fn design_highpass(fc: f64, fs: f64) -> Result<BiquadCoeffs, Error> {
    let Prewarp { k2, sqrt2_k, norm } = prewarp(fc, fs)?;
    Ok(BiquadCoeffs {
        b0: norm,
        b1: -2.0 * norm,
        b2: norm,
        a1: 2.0 * (k2 - 1.0) * norm,
        a2: (1.0 - sqrt2_k + k2) * norm,
    })
}

/// Second-order all-pass whose phase equals that of `LP(fc)^2 + HP(fc)^2`
/// at every frequency. Numerator is the reversed denominator, so the
/// magnitude is exactly 1 on the unit circle even with rounded coefficients.
pub fn design_allpass(fc: f64, fs: f64) -> Result<BiquadCoeffs, Error> {
    let Prewarp { k2, sqrt2_k, norm } = prewarp(fc, fs)?;
    let a1 = 2.0 * (k2 - 1.0) * norm;
    let a2 = (1.0 - sqrt2_k + k2) * norm;
    Ok(BiquadCoeffs {
        b0: a2,
        b1: a1,
        b2: 1.0,
        a1,
        a2,
    })
}

impl BiquadCoeffs {
    /// Identity section (`H(z) = 1`).
    pub fn identity() -> Self {
        BiquadCoeffs {
            b0: 1.0,
            b1: 0.0,
            b2: 0.0,
            a1: 0.0,
            a2: 0.0,
        }
    }

    /// Evaluate the transfer function at frequency `f` Hz for sample rate
    /// `fs`, i.e. `H(e^{j 2 pi f / fs})`.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let z1 = Complex64::new(0.0, -w).exp();
        let z2 = z1 * z1;
        let num = Complex64::new(self.b0, 0.0) + z1 * self.b1 + z2 * self.b2;
        let den = Complex64::new(1.0, 0.0) + z1 * self.a1 + z2 * self.a2;
        num / den
    }

    /// True when both poles lie strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        // Jury criterion for 1 + a1 z^-1 + a2 z^-2.
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

/// One biquad section with its two-sample delay state, processed in
/// transposed direct form II.
#[derive(Debug, Clone)]
pub struct Biquad {
    coeffs: BiquadCoeffs,
    z1: f64,
    z2: f64,
}

impl Biquad {
    pub fn new(coeffs: BiquadCoeffs) -> Self {
        Self {
            coeffs,
            z1: 0.0,
            z2: 0.0,
        }
    }

    pub fn coeffs(&self) -> &BiquadCoeffs {
        &self.coeffs
    }

    /// Zero both delay states.
    pub fn reset(&mut self) {
        self.z1 = 0.0;
        self.z2 = 0.0;
    }

    #[inline(always)]
    pub fn process(&mut self, x: f64) -> f64 {
        let c = &self.coeffs;
        let y = c.b0 * x + self.z1;
        self.z1 = c.b1 * x - c.a1 * y + self.z2;
        self.z2 = c.b2 * x - c.a2 * y;
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 48000.0;

    fn mag_db(c: &BiquadCoeffs, f: f64, fs: f64) -> f64 {
        20.0 * c.response(f, fs).norm().log10()
    }

    // Evaluated from the analog prototype: |H(j w_c)| = 1/sqrt(2).
    const HALF_POWER_DB: f64 = -3.010299956639812;

    #[test]
    fn lowpass_dc_unity_and_nyquist_zero() {
        let c = design_lowpass(1000.0, FS).unwrap();
        // Gain at DC: (b0+b1+b2)/(1+a1+a2) must be exactly 1.
        let dc = (c.b0 + c.b1 + c.b2) / (1.0 + c.a1 + c.a2);
        assert!((dc - 1.0).abs() < 1e-14, "dc gain {dc}");
        // Transmission zero at Nyquist: b0 - b1 + b2 = 0.
        assert_eq!(c.b0 - c.b1 + c.b2, 0.0);
    }

    #[test]
    fn lowpass_half_power_at_fc() {
        let c = design_lowpass(1000.0, FS).unwrap();
        assert!((mag_db(&c, 1000.0, FS) - HALF_POWER_DB).abs() < 1e-3);
    }

    #[test]
    fn highpass_mirrors_lowpass() {
        let c = design_highpass(1000.0, FS).unwrap();
        // Zero at DC.
        let dc = (c.b0 + c.b1 + c.b2) / (1.0 + c.a1 + c.a2);
        assert!(dc.abs() < 1e-14);
        // Unity at Nyquist: (b0-b1+b2)/(1-a1+a2) = 1.
        let ny = (c.b0 - c.b1 + c.b2) / (1.0 - c.a1 + c.a2);
        assert!((ny - 1.0).abs() < 1e-14);
        assert!((mag_db(&c, 1000.0, FS) - HALF_POWER_DB).abs() < 1e-3);
    }

    #[test]
    fn allpass_magnitude_is_unity_everywhere() {
        // The numerator is the reversed denominator, so |H| = 1 exactly;
        // what is measured here is the cancellation-limited precision of
        // evaluating two nearly-singular polynomials near a low fc.
        for &fc in &[30.0, 70.0, 1000.0, 10000.0, 20000.0] {
            let c = design_allpass(fc, FS).unwrap();
            for i in 0..500 {
                let f = 1.0 + (FS / 2.0 - 2.0) * i as f64 / 499.0;
                let mag = c.response(f, FS).norm();
                assert!((mag - 1.0).abs() < 1e-9, "fc={fc} f={f} mag={mag}");
            }
        }
    }

    #[test]
    fn allpass_phase_matches_lp2_plus_hp2() {
        for &fc in &[70.0, 375.0, 1000.0, 3750.0, 15000.0] {
            let lp = design_lowpass(fc, FS).unwrap();
            let hp = design_highpass(fc, FS).unwrap();
            let ap = design_allpass(fc, FS).unwrap();
            for i in 0..2000 {
                let f = 10.0 * (2.0_f64.powf(11.0 * i as f64 / 1999.0));
                if f >= FS / 2.0 {
                    break;
                }
                let l = lp.response(f, FS);
                let h = hp.response(f, FS);
                let sum = l * l + h * h;
                let a = ap.response(f, FS);
                let dphi = (sum / a).arg();
                assert!(dphi.abs() < 1e-9, "fc={fc} f={f} dphi={dphi}");
            }
        }
    }

    #[test]
    fn allpass_phase_zero_at_dc() {
        let c = design_allpass(1000.0, FS).unwrap();
        let phi = c.response(0.0, FS).arg();
        assert!(phi.abs() < 1e-12);
    }

    #[test]
    fn designs_are_stable() {
        for &fc in &[10.0, 70.0, 1000.0, 23000.0, 23999.0] {
            assert!(design_lowpass(fc, FS).unwrap().is_stable());
            assert!(design_highpass(fc, FS).unwrap().is_stable());
            assert!(design_allpass(fc, FS).unwrap().is_stable());
        }
    }

    #[test]
    fn rejects_out_of_range_frequency() {
        assert!(design_lowpass(0.0, FS).is_err());
        assert!(design_lowpass(-5.0, FS).is_err());
        assert!(design_lowpass(24000.0, FS).is_err());
        assert!(design_highpass(f64::NAN, FS).is_err());
        assert!(design_allpass(1000.0, 0.0).is_err());
    }

    #[test]
    fn process_matches_response_for_steady_tone() {
        // Feed a long sine through the sample loop; the settled amplitude
        // must match |H| from the analytic evaluation.
        let fc = 1000.0;
        let f = 2500.0;
        let c = design_lowpass(fc, FS).unwrap();
        let mut bq = Biquad::new(c);
        let n = 48000;
        let mut peak = 0.0_f64;
        for t in 0..n {
            let x = (2.0 * std::f64::consts::PI * f * t as f64 / FS).sin();
            let y = bq.process(x);
            if t > n / 2 {
                peak = peak.max(y.abs());
            }
        }
        let expected = c.response(f, FS).norm();
        assert!(
            (peak - expected).abs() < 1e-3,
            "peak {peak} vs |H| {expected}"
        );
    }

    #[test]
    fn reset_zeroes_state() {
        let mut bq = Biquad::new(design_lowpass(500.0, FS).unwrap());
        for t in 0..64 {
            bq.process((t as f64 * 0.3).sin());
        }
        bq.reset();
        assert_eq!(bq.process(0.0), 0.0);
    }
}
