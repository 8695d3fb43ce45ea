//! Per-frame ENF phase: conventional DFT phase (φ⁰) and the
//! derivative-spectrum high-resolution phase (φ¹) with its frequency
//! estimate.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::dsp::{hanning, wrap_phase};
use crate::enf::EnfComponent;
use crate::error::{Error, Result};

pub const DEFAULT_N_DFT: usize = 32_768;

/// Frame = 10 nominal cycles, hop = 1 nominal cycle, Hanning window.
#[derive(Debug, Clone, PartialEq)]
pub struct FramingParams {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Vec<f64>,
}

impl FramingParams {
    pub fn new(sample_rate: u32, nominal_hz: f64) -> Result<Self> {
        let cycle = sample_rate as f64 / nominal_hz;
        if !(cycle >= 1.0) || (cycle - cycle.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "{sample_rate} Hz is not an integer multiple of nominal {nominal_hz} Hz"
            )));
        }
        let hop = cycle.round() as usize;
        Ok(Self::with_lengths(10 * hop, hop))
    }

    pub fn with_lengths(frame_len: usize, hop: usize) -> Self {
        FramingParams {
            frame_len,
            hop,
            window: hanning(frame_len),
        }
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len || self.hop == 0 {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSequence {
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub f_dft1: Vec<f64>,
    pub n_frames: usize,
    /// Frames whose spectrum was degenerate and inherited the previous values.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePhase {
    pub phi0: f64,
    pub phi1: f64,
    pub f1: f64,
}

/// `out[n] = f_d (x[n] − x[n−1])`, `out[0] = 0`.
pub fn approx_derivative(x: &[f64], f_d: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let mut out = Vec::with_capacity(x.len());
    out.push(0.0);
    out.extend(x.windows(2).map(|w| f_d * (w[1] - w[0])));
    Ok(out)
}

/// Windowed frames; frame `k` covers `[k·hop, k·hop + frame_len)`.
pub fn frame_signal(x: &[f64], fp: &FramingParams) -> Result<Vec<Vec<f64>>> {
    let count = fp.frame_count(x.len());
    if count == 0 {
        return Err(Error::TooShort {
            needed: fp.frame_len,
            got: x.len(),
        });
    }
    Ok((0..count)
        .map(|k| {
            let start = k * fp.hop;
            x[start..start + fp.frame_len]
                .iter()
                .zip(&fp.window)
                .map(|(v, w)| v * w)
                .collect()
        })
        .collect())
}

fn dft_bin(frame: &[f64], k: f64, n_dft: usize) -> Complex64 {
    let step = -2.0 * PI * k / n_dft as f64;
    frame
        .iter()
        .enumerate()
        .map(|(n, &v)| Complex64::from_polar(v, step * n as f64))
        .sum()
}

/// Evaluates only the DFT bins inside `nominal ± 1 Hz`, which is all the
/// estimator ever looks at; the twiddles are precomputed once per frame
/// length.
#[derive(Debug, Clone)]
pub struct PhaseEstimator {
    n_dft: usize,
    nominal: f64,
    f_d: f64,
    k_start: usize,
    twiddles: Vec<Vec<Complex64>>,
}

impl PhaseEstimator {
    pub fn new(frame_len: usize, n_dft: usize, nominal: f64, f_d: f64) -> Result<Self> {
        if n_dft < frame_len {
            return Err(Error::InvalidInput(format!(
                "N_DFT {n_dft} shorter than frame length {frame_len}"
            )));
        }
        let k_start = (((nominal - 1.0) * n_dft as f64 / f_d).ceil()).max(1.0) as usize;
        let k_end = ((nominal + 1.0) * n_dft as f64 / f_d).floor() as usize;
        if k_end < k_start || k_end >= n_dft / 2 {
            return Err(Error::InvalidInput(format!(
                "search band around {nominal} Hz is empty at N_DFT {n_dft}"
            )));
        }
        let twiddles = (k_start..=k_end)
            .map(|k| {
                let step = -2.0 * PI * k as f64 / n_dft as f64;
                (0..frame_len)
                    .map(|n| Complex64::from_polar(1.0, step * n as f64))
                    .collect()
            })
            .collect();
        Ok(PhaseEstimator {
            n_dft,
            nominal,
            f_d,
            k_start,
            twiddles,
        })
    }

    fn band_bin(&self, frame: &[f64], idx: usize) -> Complex64 {
        frame.iter().zip(&self.twiddles[idx]).map(|(&v, &t)| t * v).sum()
    }

    /// Returns `None` for a degenerate (silent) frame.
    pub fn estimate(&self, frame_x: &[f64], frame_dx: &[f64]) -> Option<FramePhase> {
        let n = self.n_dft as f64;
        let (mut best, mut best_mag) = (0usize, -1.0f64);
        for idx in 0..self.twiddles.len() {
            let mag = self.band_bin(frame_dx, idx).norm();
            if mag > best_mag {
                best_mag = mag;
                best = idx;
            }
        }
        let k_peak = (self.k_start + best) as f64;
        let x_peak = self.band_bin(frame_x, best);
        if !(best_mag > 0.0) || !(x_peak.norm() > 0.0) || !best_mag.is_finite() {
            return None;
        }

        let scale = PI * k_peak / (n * (PI * k_peak / n).sin());
        let f1 = (scale * best_mag / x_peak.norm() / (2.0 * PI)).clamp(self.nominal - 1.0, self.nominal + 1.0);
        let phi0 = x_peak.arg();

        let k_dft1 = f1 * n / self.f_d;
        let (k_low, k_high) = (k_dft1.floor(), k_dft1.ceil());
        let theta_low = dft_bin(frame_dx, k_low, self.n_dft).arg();
        let theta = if k_high == k_low {
            theta_low
        } else {
            let theta_high = theta_low + wrap_phase(dft_bin(frame_dx, k_high, self.n_dft).arg() - theta_low);
            (k_dft1 - k_low) * (theta_high - theta_low) / (k_high - k_low) + theta_low
        };

        // The backward difference leads the signal by arg(1 − e^{−iω0});
        // the ratio below is tan(θ − that lead).
        let w0 = 2.0 * PI * f1 / self.f_d;
        let (s, c) = (w0.sin(), 1.0 - w0.cos());
        let t = theta.tan();
        let v = ((t * c - s) / (c + t * s)).atan();
        let alt = wrap_phase(v + PI);
        let phi1 = if wrap_phase(v - phi0).abs() <= wrap_phase(alt - phi0).abs() {
            wrap_phase(v)
        } else {
            alt
        };
        if !(phi0.is_finite() && phi1.is_finite() && f1.is_finite()) {
            return None;
        }
        Some(FramePhase { phi0, phi1, f1 })
    }
}

/// Single-frame estimate; errors on a degenerate frame.
pub fn estimate_frame_phase(
    frame_x: &[f64],
    frame_dx: &[f64],
    n_dft: usize,
    nominal: f64,
    f_d: f64,
) -> Result<FramePhase> {
    if frame_x.len() != frame_dx.len() {
        return Err(Error::Shape(format!(
            "frame lengths differ: {} vs {}",
            frame_x.len(),
            frame_dx.len()
        )));
    }
    PhaseEstimator::new(frame_x.len(), n_dft, nominal, f_d)?
        .estimate(frame_x, frame_dx)
        .ok_or_else(|| Error::InvalidInput("degenerate frame: no spectral peak in band".into()))
}

/// Whole-signal driver: derivative, framing of both signals, per-frame
/// estimation. Degenerate frames inherit the previous frame's estimate.
pub fn estimate_phase(enf: &EnfComponent, n_dft: usize) -> Result<PhaseSequence> {
    let fp = FramingParams::new(enf.sample_rate, enf.nominal_hz)?;
    estimate_phase_with(enf, &fp, n_dft)
}

pub fn estimate_phase_with(enf: &EnfComponent, fp: &FramingParams, n_dft: usize) -> Result<PhaseSequence> {
    let f_d = enf.sample_rate as f64;
    let dx = approx_derivative(&enf.samples, f_d)?;
    let frames_x = frame_signal(&enf.samples, fp)?;
    let frames_dx = frame_signal(&dx, fp)?;
    if frames_x.len() < 2 {
        return Err(Error::TooShort {
            needed: fp.frame_len + fp.hop,
            got: enf.samples.len(),
        });
    }
    let est = PhaseEstimator::new(fp.frame_len, n_dft, enf.nominal_hz, f_d)?;

    let n = frames_x.len();
    let mut seq = PhaseSequence {
        phi0: Vec::with_capacity(n),
        phi1: Vec::with_capacity(n),
        f_dft1: Vec::with_capacity(n),
        n_frames: n,
        flagged: Vec::new(),
    };
    let mut prev = FramePhase {
        phi0: 0.0,
        phi1: 0.0,
        f1: enf.nominal_hz,
    };
    for (i, (fx, fdx)) in frames_x.iter().zip(&frames_dx).enumerate() {
        let fr = match est.estimate(fx, fdx) {
            Some(fr) => fr,
            None => {
                seq.flagged.push(i);
                prev
            }
        };
        seq.phi0.push(fr.phi0);
        seq.phi1.push(fr.phi1);
        seq.f_dft1.push(fr.f1);
        prev = fr;
    }
    Ok(seq)
}
