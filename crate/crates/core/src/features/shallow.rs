use serde::{Deserialize, Serialize};

use crate::dsp::wrapped_diff;
use crate::error::{Error, Result};
use crate::freq::FrequencySequence;
use crate::phase::PhaseSequence;

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Discontinuity statistics of the two phase estimates and the IF track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShallowFeatures {
    pub f0: f64,
    pub f1: f64,
    pub ff: f64,
}

impl ShallowFeatures {
    pub fn to_array(&self) -> [f64; 3] {
        [self.f0, self.f1, self.ff]
    }
}

/// `100 · ln(var)` of a difference sequence, population variance over the
/// differences, clamped below at [`VARIANCE_FLOOR`].
pub fn log_variance(diffs: &[f64]) -> f64 {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    100.0 * var.max(VARIANCE_FLOOR).ln()
}

pub fn shallow_stats(phase: &PhaseSequence, freq: &FrequencySequence) -> Result<ShallowFeatures> {
    if phase.n_frames < 2 || phase.phi0.len() < 2 || phase.phi1.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: phase.n_frames,
        });
    }
    if freq.f_hil.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: freq.f_hil.len(),
        });
    }
    let fdiff: Vec<f64> = freq.f_hil.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(ShallowFeatures {
        f0: log_variance(&wrapped_diff(&phase.phi0)),
        f1: log_variance(&wrapped_diff(&phase.phi1)),
        ff: log_variance(&fdiff),
    })
}
