//! Shared signal-processing primitives: windows, phase wrapping, FFT
//! convolution, and IIR design/filtering.

pub mod elliptic;
pub mod window;

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

pub use elliptic::{ellip_lowpass, Sos, SosFilter};
pub use window::{bessel_i0, hanning, kaiser, kaiser_beta};

/// Principal value of an angle, in (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Wrapped first differences, `out[i] = wrap(x[i+1] − x[i])`.
pub fn wrapped_diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| wrap_phase(w[1] - w[0])).collect()
}

/// Linear convolution via FFT; output length `a.len() + b.len() − 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.into_iter().take(out_len).map(|c| c.re * scale).collect()
}

/// Magnitude of the DTFT of `taps` at `freq_hz`.
pub fn freq_response(taps: &[f64], freq_hz: f64, sample_rate: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / sample_rate;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &h) in taps.iter().enumerate() {
        let (s, c) = (w * n as f64).sin_cos();
        re += h * c;
        im -= h * s;
    }
    (re * re + im * im).sqrt()
}

/// Dense magnitude response of `taps` on `n_fft / 2 + 1` uniformly spaced
/// frequencies in [0, fs/2]; returns `(freqs, magnitudes)`.
pub fn dense_response(taps: &[f64], sample_rate: f64, n_fft: usize) -> (Vec<f64>, Vec<f64>) {
    let n_fft = n_fft.max(taps.len()).next_power_of_two();
    let mut buf: Vec<Complex64> = taps.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    FftPlanner::<f64>::new().plan_fft_forward(n_fft).process(&mut buf);
    let half = n_fft / 2 + 1;
    let freqs = (0..half).map(|k| k as f64 * sample_rate / n_fft as f64).collect();
    let mags = buf[..half].iter().map(|c| c.norm()).collect();
    (freqs, mags)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

pub fn db(x: f64) -> f64 {
    20.0 * x.log10()
}
