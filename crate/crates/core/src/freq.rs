//! Instantaneous frequency of the ENF component from its analytic signal,
//! smoothed by a 5th-order elliptic low-pass and trimmed at both ends.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{ellip_lowpass, wrap_phase, SosFilter};
use crate::enf::EnfComponent;
use crate::error::{Error, Result};

pub const SMOOTHING_ORDER: usize = 5;
pub const SMOOTHING_CUTOFF_HZ: f64 = 20.0;
pub const SMOOTHING_RIPPLE_DB: f64 = 0.5;
pub const SMOOTHING_STOPBAND_DB: f64 = 64.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySequence {
    pub f_hil: Vec<f64>,
    pub sample_rate: u32,
    pub trim_samples: usize,
    /// Samples whose analytic magnitude was zero; they inherit a neighbor.
    pub flagged: Vec<usize>,
}

/// `x + i·H{x}` by the frequency-domain construction: transform, zero the
/// negative frequencies, double the positive ones, invert.
pub fn analytic_signal(x: &[f64]) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    // The real part is the input by construction; restore it exactly.
    for (v, &orig) in buf.iter_mut().zip(x) {
        v.re = orig;
    }
    Ok(buf)
}

/// `f[n] = fs/2π · wrap(∠a[n] − ∠a[n−1])`, `f[0] = f[1]`. Zero-magnitude
/// samples inherit the previous value and are reported.
pub fn instantaneous_frequency(analytic: &[Complex64], fs: f64) -> (Vec<f64>, Vec<usize>) {
    let n = analytic.len();
    let mut f = vec![0.0; n];
    let mut flagged = Vec::new();
    if n < 2 {
        return (f, flagged);
    }
    for i in 1..n {
        if analytic[i].norm() == 0.0 || analytic[i - 1].norm() == 0.0 {
            flagged.push(i);
            f[i] = if i > 1 { f[i - 1] } else { 0.0 };
            continue;
        }
        f[i] = fs / (2.0 * PI) * wrap_phase(analytic[i].arg() - analytic[i - 1].arg());
    }
    f[0] = f[1];
    (f, flagged)
}

pub fn smoothing_filter(fs: f64) -> Result<SosFilter> {
    ellip_lowpass(
        SMOOTHING_ORDER,
        SMOOTHING_RIPPLE_DB,
        SMOOTHING_STOPBAND_DB,
        SMOOTHING_CUTOFF_HZ,
        fs,
    )
}

/// Forward elliptic smoothing, then exactly `fs` samples dropped per side.
pub fn smooth_and_trim(f: &[f64], fs: u32) -> Result<FrequencySequence> {
    let trim = fs as usize;
    if f.len() <= 2 * trim {
        return Err(Error::TooShort {
            needed: 2 * trim + 1,
            got: f.len(),
        });
    }
    let filt = smoothing_filter(fs as f64)?;
    let smoothed = filt.filter(f);
    Ok(FrequencySequence {
        f_hil: smoothed[trim..smoothed.len() - trim].to_vec(),
        sample_rate: fs,
        trim_samples: trim,
        flagged: Vec::new(),
    })
}

/// Full chain from the ENF component to `f_hil`.
pub fn estimate_frequency(enf: &EnfComponent) -> Result<FrequencySequence> {
    let a = analytic_signal(&enf.samples)?;
    let fs = enf.sample_rate as f64;
    let (f, flagged) = instantaneous_frequency(&a, fs);
    let mut seq = smooth_and_trim(&f, enf.sample_rate)?;
    seq.flagged = flagged;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_of_cosine_is_unit_phasor() {
        let fs = 1000.0;
        let x: Vec<f64> = (0..5000).map(|n| (2.0 * PI * 50.0 * n as f64 / fs).cos()).collect();
        let a = analytic_signal(&x).unwrap();
        for (v, &orig) in a.iter().zip(&x) {
            assert_eq!(v.re, orig);
        }
        for v in &a[500..4500] {
            assert!((v.norm() - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn hilbert_of_sine_is_minus_cosine() {
        let fs = 1000.0;
        let x: Vec<f64> = (0..5000).map(|n| (2.0 * PI * 50.3 * n as f64 / fs).sin()).collect();
        let a = analytic_signal(&x).unwrap();
        for (i, v) in a.iter().enumerate().take(4500).skip(500) {
            let want = -(2.0 * PI * 50.3 * i as f64 / fs).cos();
            assert!((v.im - want).abs() < 0.01, "{i}: {} vs {want}", v.im);
        }
    }

    #[test]
    fn too_short_for_analytic() {
        assert!(analytic_signal(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn constant_increment_gives_constant_frequency() {
        let delta = 0.3;
        let a: Vec<Complex64> = (0..100).map(|n| Complex64::from_polar(2.0, delta * n as f64)).collect();
        let (f, flagged) = instantaneous_frequency(&a, 1000.0);
        assert!(flagged.is_empty());
        for v in f {
            assert!((v - 1000.0 * delta / (2.0 * PI)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_magnitude_flagged() {
        let mut a: Vec<Complex64> = (0..10).map(|n| Complex64::from_polar(1.0, 0.2 * n as f64)).collect();
        a[5] = Complex64::new(0.0, 0.0);
        let (f, flagged) = instantaneous_frequency(&a, 1000.0);
        assert_eq!(flagged, vec![5, 6]);
        assert_eq!(f[5], f[4]);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn smoothing_constant_is_constant() {
        let f = vec![50.0; 5000];
        let s = smooth_and_trim(&f, 1000).unwrap();
        assert_eq!(s.f_hil.len(), 3000);
        assert_eq!(s.trim_samples, 1000);
        for v in &s.f_hil {
            assert!((v - 50.0).abs() < 1e-9);
        }
        assert!(smooth_and_trim(&f[..2000], 1000).is_err());
    }

    #[test]
    fn smoothing_removes_100hz_oscillation() {
        let fs = 1000.0;
        let f: Vec<f64> = (0..6000)
            .map(|n| 50.0 + 0.5 * (2.0 * PI * 100.0 * n as f64 / fs).sin())
            .collect();
        let s = smooth_and_trim(&f, 1000).unwrap();
        let resid = s.f_hil.iter().map(|v| (v - 50.0).abs()).fold(0.0, f64::max);
        assert!(resid < 0.01, "{resid}");
    }

    #[test]
    fn smoothing_matches_reference_response() {
        // magnitudes of the reference 5th-order elliptic design
        // (0.5 dB, 64 dB, 20 Hz at 1000 Hz)
        let filt = smoothing_filter(1000.0).unwrap();
        let reference = [
            (0.0, 1.0),
            (5.0, 0.951_939_057_931_119),
            (19.0, 0.998_775_881_663_284_1),
            (20.0, 0.944_060_876_285_952_6),
            (25.0, 0.114_939_222_756_699_71),
            (40.0, 2.492_423_154_400_179_3e-5),
            (100.0, 0.000_618_125_366_312_387),
            (499.0, 1.107_241_597_712_154_4e-6),
        ];
        for (f, want) in reference {
            let got = filt.magnitude(f, 1000.0);
            assert!((got - want).abs() < 1e-6 * want.max(1e-3), "{f} Hz: {got} vs {want}");
        }
    }
}
