//! Narrowband isolation of the ENF component with a linear-phase FIR
//! bandpass and integer group-delay compensation.

use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::dsp::{fft_convolve, kaiser, kaiser_beta};
use crate::error::{Error, Result};

/// Design targets for the ENF bandpass. The stopband starts at
/// `center_hz ± bandwidth_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub order: usize,
    pub passband_ripple_db: f64,
    pub stopband_atten_db: f64,
    pub sample_rate: u32,
}

impl BandpassSpec {
    /// Extra attenuation requested from the Kaiser estimate so the realized
    /// stopband clears `stopband_atten_db` at the band edge.
    pub const DESIGN_MARGIN_DB: f64 = 10.0;

    pub fn for_nominal(nominal_hz: f64, sample_rate: u32) -> Self {
        BandpassSpec {
            center_hz: nominal_hz,
            bandwidth_hz: 0.6,
            order: 10_000,
            passband_ripple_db: 0.5,
            stopband_atten_db: 100.0,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate as f64 / 2.0;
        let lo = self.center_hz - self.bandwidth_hz / 2.0;
        let hi = self.center_hz + self.bandwidth_hz / 2.0;
        if !(self.bandwidth_hz > 0.0 && lo > 0.0 && hi < nyq) {
            return Err(Error::InfeasibleFilter(format!(
                "band {lo}..{hi} Hz not inside (0, {nyq})"
            )));
        }
        if self.order == 0 || self.order % 2 != 0 {
            return Err(Error::InfeasibleFilter(format!(
                "order {} must be positive and even",
                self.order
            )));
        }
        Ok(())
    }

    pub fn group_delay(&self) -> usize {
        self.order / 2
    }

    fn kaiser_transition_hz(&self) -> f64 {
        let a = self.stopband_atten_db + Self::DESIGN_MARGIN_DB;
        (a - 7.95) / (2.285 * 2.0 * std::f64::consts::PI * self.order as f64) * self.sample_rate as f64
    }

    /// Cutoff of the lowpass prototype (half the realized passband width).
    pub fn prototype_cutoff_hz(&self) -> f64 {
        self.bandwidth_hz - 0.5 * self.kaiser_transition_hz()
    }
}

/// Linear-phase FIR taps, length `order + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

/// Kaiser-windowed sinc bandpass: a lowpass prototype modulated to the
/// nominal frequency, normalized to unit gain at the center.
pub fn design_bandpass(spec: &BandpassSpec) -> Result<FilterCoefficients> {
    spec.validate()?;
    let fc = spec.prototype_cutoff_hz();
    if fc <= 0.0 {
        return Err(Error::InfeasibleFilter(format!(
            "{} taps at {} Hz cannot reach {} dB within {} Hz of center",
            spec.order + 1,
            spec.sample_rate,
            spec.stopband_atten_db,
            spec.bandwidth_hz
        )));
    }
    let fs = spec.sample_rate as f64;
    let m = spec.group_delay() as isize;
    let beta = kaiser_beta(spec.stopband_atten_db + BandpassSpec::DESIGN_MARGIN_DB);
    let win = kaiser(spec.order + 1, beta);
    let w0 = 2.0 * std::f64::consts::PI * spec.center_hz / fs;
    let nc = 2.0 * fc / fs;
    let mut taps: Vec<f64> = win
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let n = (i as isize - m) as f64;
            let arg = std::f64::consts::PI * nc * n;
            let sinc = if n == 0.0 { 1.0 } else { arg.sin() / arg };
            w * nc * sinc * 2.0 * (w0 * n).cos()
        })
        .collect();
    // Exact symmetry, then unit gain at the center frequency (the response of
    // a symmetric filter at w0 is real after removing the linear phase).
    let len = taps.len();
    for i in 0..len / 2 {
        let avg = 0.5 * (taps[i] + taps[len - 1 - i]);
        taps[i] = avg;
        taps[len - 1 - i] = avg;
    }
    let gain: f64 = taps
        .iter()
        .enumerate()
        .map(|(i, &h)| h * (w0 * (i as isize - m) as f64).cos())
        .sum();
    taps.iter_mut().for_each(|h| *h /= gain);
    Ok(FilterCoefficients {
        taps,
        sample_rate: spec.sample_rate,
    })
}

/// The isolated ENF waveform at the analysis rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EnfComponent {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub nominal_hz: f64,
}

/// Zero-phase ENF extraction: full linear convolution with the designed
/// taps, then the output is read starting at the group delay so it aligns
/// with the input sample for sample. The first and last `order/2` samples see
/// a partially filled filter (zero-padded edges) and are kept as is.
pub fn extract_enf(clip: &AudioClip, spec: &BandpassSpec) -> Result<EnfComponent> {
    let coeffs = design_bandpass(spec)?;
    extract_with(clip, spec, &coeffs)
}

/// Same as [`extract_enf`] with precomputed coefficients.
pub fn extract_with(clip: &AudioClip, spec: &BandpassSpec, coeffs: &FilterCoefficients) -> Result<EnfComponent> {
    if clip.sample_rate != spec.sample_rate {
        return Err(Error::InvalidInput(format!(
            "clip rate {} Hz differs from filter rate {} Hz",
            clip.sample_rate, spec.sample_rate
        )));
    }
    let needed = spec.order + 2;
    if clip.samples.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: clip.samples.len(),
        });
    }
    let full = fft_convolve(&clip.samples, &coeffs.taps);
    let d = spec.group_delay();
    Ok(EnfComponent {
        samples: full[d..d + clip.samples.len()].to_vec(),
        sample_rate: spec.sample_rate,
        nominal_hz: spec.center_hz,
    })
}
