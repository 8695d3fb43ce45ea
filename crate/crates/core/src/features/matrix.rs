use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `m = ceil(sqrt(max_seq_len))`, the shared frame length for a dataset.
pub fn frame_length_for(max_seq_len: usize) -> Result<usize> {
    if max_seq_len < 4 {
        return Err(Error::InvalidInput(format!(
            "maximum sequence length {max_seq_len} is below 4"
        )));
    }
    let mut m = (max_seq_len as f64).sqrt().ceil() as usize;
    // guard the float sqrt at perfect squares
    while m * m < max_seq_len {
        m += 1;
    }
    while m > 1 && (m - 1) * (m - 1) >= max_seq_len {
        m -= 1;
    }
    Ok(m)
}

/// An `m × m` grid whose rows are consecutive frames of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    /// Row-major values.
    pub values: Vec<f64>,
    pub m: usize,
    pub hop: usize,
    pub pad_count: usize,
}

impl FeatureMatrix {
    pub fn zeros(m: usize) -> Self {
        FeatureMatrix {
            values: vec![0.0; m * m],
            m,
            hop: 0,
            pad_count: 0,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.m..(r + 1) * self.m]
    }

    pub fn overlap(&self) -> usize {
        self.m.saturating_sub(self.hop)
    }
}

/// Frames `seq` into exactly `m` rows of length `m` with the adaptive hop
/// `ceil((X − m) / (m − 1))`; the tail past the end of the sequence is
/// zero-filled.
pub fn build_matrix(seq: &[f64], m: usize) -> Result<FeatureMatrix> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("frame length {m} must be at least 2")));
    }
    let x = seq.len();
    if x < m {
        return Err(Error::TooShort { needed: m, got: x });
    }
    if x > m * m {
        return Err(Error::InvalidInput(format!(
            "sequence of {x} samples exceeds the {m}×{m} matrix capacity"
        )));
    }
    let hop = (x - m).div_ceil(m - 1);
    let mut values = vec![0.0; m * m];
    for r in 0..m {
        let start = r * hop;
        if start >= x {
            continue;
        }
        let end = (start + m).min(x);
        values[r * m..r * m + (end - start)].copy_from_slice(&seq[start..end]);
    }
    let pad_count = ((m - 1) * hop + m).saturating_sub(x);
    Ok(FeatureMatrix {
        values,
        m,
        hop,
        pad_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_lengths() {
        assert_eq!(frame_length_for(2055).unwrap(), 46);
        assert_eq!(frame_length_for(37_281).unwrap(), 194);
        assert_eq!(frame_length_for(100).unwrap(), 10);
        assert_eq!(frame_length_for(101).unwrap(), 11);
        assert!(frame_length_for(3).is_err());
    }

    #[test]
    fn exact_tiling() {
        let seq: Vec<f64> = (0..100).map(|v| v as f64).collect();
        let fm = build_matrix(&seq, 10).unwrap();
        assert_eq!((fm.hop, fm.overlap(), fm.pad_count), (10, 0, 0));
        assert_eq!(fm.values, seq);
    }

    #[test]
    fn paper_sized_phase_sequence() {
        let seq: Vec<f64> = (1..=2055).map(|v| v as f64).collect();
        let fm = build_matrix(&seq, 46).unwrap();
        assert_eq!((fm.hop, fm.overlap(), fm.pad_count), (45, 1, 16));
        assert_eq!(fm.row(45)[0], 2026.0);
        assert_eq!(&fm.row(45)[30..], &[0.0; 16]);
    }

    #[test]
    fn minimum_length_repeats_rows() {
        let seq = [1.0, 2.0, 3.0];
        let fm = build_matrix(&seq, 3).unwrap();
        assert_eq!(fm.hop, 0);
        for r in 0..3 {
            assert_eq!(fm.row(r), &seq);
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(build_matrix(&[1.0; 5], 6).is_err());
        assert!(build_matrix(&[1.0; 37], 6).is_err());
        assert!(build_matrix(&[1.0; 5], 1).is_err());
    }

    proptest! {
        #[test]
        fn shape_and_reconstruction(m in 2usize..30, frac in 0.0f64..1.0) {
            let lo = m + 1;
            let hi = m * m;
            let x = lo + ((hi - lo) as f64 * frac) as usize;
            let seq: Vec<f64> = (0..x).map(|v| v as f64 * 0.5 - 3.0).collect();
            let fm = build_matrix(&seq, m).unwrap();
            prop_assert_eq!(fm.values.len(), m * m);
            prop_assert!(fm.hop >= 1 && fm.hop <= m);
            let mut rebuilt = Vec::new();
            for r in 0..m - 1 {
                rebuilt.extend_from_slice(&fm.row(r)[..fm.hop]);
            }
            rebuilt.extend_from_slice(fm.row(m - 1));
            rebuilt.truncate(x);
            prop_assert_eq!(rebuilt, seq);
        }
    }
}
