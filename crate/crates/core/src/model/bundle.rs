use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FitCoefficients, ShallowFeatures};
use crate::nnet::Tensor;

pub const N_SHALLOW: usize = 3;
pub const N_COEFFS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Tampered,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Genuine => 0,
            Label::Tampered => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            Label::Tampered
        } else {
            Label::Genuine
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Tampered => "tampered",
        }
    }
}

/// Everything the classifier sees for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub shallow: ShallowFeatures,
    pub phase_matrix: FeatureMatrix,
    pub freq_matrix: FeatureMatrix,
    pub phase_coeffs: FitCoefficients,
    pub freq_coeffs: FitCoefficients,
    pub label: Option<Label>,
}

impl FeatureBundle {
    pub fn validate(&self, m_phase: usize, m_freq: usize) -> Result<()> {
        if self.phase_matrix.m != m_phase || self.phase_matrix.values.len() != m_phase * m_phase {
            return Err(Error::Shape(format!(
                "phase matrix is {}×{}, network expects {m_phase}",
                self.phase_matrix.m, self.phase_matrix.m
            )));
        }
        if self.freq_matrix.m != m_freq || self.freq_matrix.values.len() != m_freq * m_freq {
            return Err(Error::Shape(format!(
                "frequency matrix is {}×{}, network expects {m_freq}",
                self.freq_matrix.m, self.freq_matrix.m
            )));
        }
        if self.phase_coeffs.coeffs.len() != N_COEFFS || self.freq_coeffs.coeffs.len() != N_COEFFS {
            return Err(Error::Shape(format!("coefficient vectors must hold {N_COEFFS} values")));
        }
        Ok(())
    }
}

/// Which feature families reach the network; a disabled family is fed as
/// zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub shallow: bool,
    pub phase_matrix: bool,
    pub freq_matrix: bool,
    pub phase_coeffs: bool,
    pub freq_coeffs: bool,
}

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask {
        shallow: true,
        phase_matrix: true,
        freq_matrix: true,
        phase_coeffs: true,
        freq_coeffs: true,
    };
    pub const SHALLOW_ONLY: FeatureMask = FeatureMask {
        shallow: true,
        phase_matrix: false,
        freq_matrix: false,
        phase_coeffs: false,
        freq_coeffs: false,
    };
    pub const PHASE_BRANCH: FeatureMask = FeatureMask {
        shallow: false,
        phase_matrix: true,
        freq_matrix: false,
        phase_coeffs: true,
        freq_coeffs: false,
    };
    pub const FREQ_BRANCH: FeatureMask = FeatureMask {
        shallow: false,
        phase_matrix: false,
        freq_matrix: true,
        phase_coeffs: false,
        freq_coeffs: true,
    };
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask::ALL
    }
}

/// Standardized network inputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub shallow: Tensor,
    pub phase_matrix: Tensor,
    pub freq_matrix: Tensor,
    pub phase_coeffs: Tensor,
    pub freq_coeffs: Tensor,
}

impl NetInput {
    pub fn zeros(m_phase: usize, m_freq: usize) -> Self {
        NetInput {
            shallow: Tensor::zeros(&[N_SHALLOW]),
            phase_matrix: Tensor::zeros(&[1, m_phase, m_phase]),
            freq_matrix: Tensor::zeros(&[1, m_freq, m_freq]),
            phase_coeffs: Tensor::zeros(&[N_COEFFS]),
            freq_coeffs: Tensor::zeros(&[N_COEFFS]),
        }
    }
}

const STD_FLOOR: f64 = 1e-12;

fn mean_std<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for &v in values {
        n += 1.0;
        s += v;
        s2 += v * v;
    }
    if n == 0.0 {
        return (0.0, 1.0);
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    let sd = var.sqrt();
    (mean, if sd > STD_FLOOR { sd } else { 1.0 })
}

/// Training-set z-score statistics: per coordinate for the shallow and
/// coefficient vectors, one scalar pair per matrix family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shallow_mean: Vec<f64>,
    pub shallow_std: Vec<f64>,
    pub phase_coeff_mean: Vec<f64>,
    pub phase_coeff_std: Vec<f64>,
    pub freq_coeff_mean: Vec<f64>,
    pub freq_coeff_std: Vec<f64>,
    pub phase_matrix_mean: f64,
    pub phase_matrix_std: f64,
    pub freq_matrix_mean: f64,
    pub freq_matrix_std: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            shallow_mean: vec![0.0; N_SHALLOW],
            shallow_std: vec![1.0; N_SHALLOW],
            phase_coeff_mean: vec![0.0; N_COEFFS],
            phase_coeff_std: vec![1.0; N_COEFFS],
            freq_coeff_mean: vec![0.0; N_COEFFS],
            freq_coeff_std: vec![1.0; N_COEFFS],
            phase_matrix_mean: 0.0,
            phase_matrix_std: 1.0,
            freq_matrix_mean: 0.0,
            freq_matrix_std: 1.0,
        }
    }

    pub fn fit(bundles: &[FeatureBundle]) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::InvalidInput("cannot fit normalization on an empty set".into()));
        }
        let per_coord = |n: usize, get: &dyn Fn(&FeatureBundle) -> Vec<f64>| {
            let rows: Vec<Vec<f64>> = bundles.iter().map(get).collect();
            let (mut means, mut stds) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for k in 0..n {
                let (m, s) = mean_std(rows.iter().map(|r| &r[k]));
                means.push(m);
                stds.push(s);
            }
            (means, stds)
        };
        let (shallow_mean, shallow_std) = per_coord(N_SHALLOW, &|b| b.shallow.to_array().to_vec());
        let (phase_coeff_mean, phase_coeff_std) = per_coord(N_COEFFS, &|b| b.phase_coeffs.coeffs.clone());
        let (freq_coeff_mean, freq_coeff_std) = per_coord(N_COEFFS, &|b| b.freq_coeffs.coeffs.clone());
        let (phase_matrix_mean, phase_matrix_std) = mean_std(bundles.iter().flat_map(|b| b.phase_matrix.values.iter()));
        let (freq_matrix_mean, freq_matrix_std) = mean_std(bundles.iter().flat_map(|b| b.freq_matrix.values.iter()));
        Ok(Normalizer {
            shallow_mean,
            shallow_std,
            phase_coeff_mean,
            phase_coeff_std,
            freq_coeff_mean,
            freq_coeff_std,
            phase_matrix_mean,
            phase_matrix_std,
            freq_matrix_mean,
            freq_matrix_std,
        })
    }

    pub fn apply(&self, b: &FeatureBundle, mask: &FeatureMask) -> NetInput {
        let z = |v: &[f64], m: &[f64], s: &[f64]| -> Vec<f64> {
            v.iter().zip(m.iter().zip(s)).map(|(x, (m, s))| (x - m) / s).collect()
        };
        let gate = |on: bool, t: Tensor| if on { t } else { t.zeros_like() };
        let mp = b.phase_matrix.m;
        let mf = b.freq_matrix.m;
        NetInput {
            shallow: gate(
                mask.shallow,
                Tensor::vector(z(&b.shallow.to_array(), &self.shallow_mean, &self.shallow_std)),
            ),
            phase_matrix: gate(
                mask.phase_matrix,
                Tensor {
                    shape: vec![1, mp, mp],
                    data: b
                        .phase_matrix
                        .values
                        .iter()
                        .map(|v| (v - self.phase_matrix_mean) / self.phase_matrix_std)
                        .collect(),
                },
            ),
            freq_matrix: gate(
                mask.freq_matrix,
                Tensor {
                    shape: vec![1, mf, mf],
                    data: b
                        .freq_matrix
                        .values
                        .iter()
                        .map(|v| (v - self.freq_matrix_mean) / self.freq_matrix_std)
                        .collect(),
                },
            ),
            phase_coeffs: gate(
                mask.phase_coeffs,
                Tensor::vector(z(&b.phase_coeffs.coeffs, &self.phase_coeff_mean, &self.phase_coeff_std)),
            ),
            freq_coeffs: gate(
                mask.freq_coeffs,
                Tensor::vector(z(&b.freq_coeffs.coeffs, &self.freq_coeff_mean, &self.freq_coeff_std)),
            ),
        }
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        vec![
            Tensor::vector(self.shallow_mean.clone()),
            Tensor::vector(self.shallow_std.clone()),
            Tensor::vector(self.phase_coeff_mean.clone()),
            Tensor::vector(self.phase_coeff_std.clone()),
            Tensor::vector(self.freq_coeff_mean.clone()),
            Tensor::vector(self.freq_coeff_std.clone()),
            Tensor::vector(vec![
                self.phase_matrix_mean,
                self.phase_matrix_std,
                self.freq_matrix_mean,
                self.freq_matrix_std,
            ]),
        ]
    }

    pub fn from_tensors(t: &[Tensor]) -> Result<Self> {
        let sizes = [N_SHALLOW, N_SHALLOW, N_COEFFS, N_COEFFS, N_COEFFS, N_COEFFS, 4];
        if t.len() != sizes.len() || t.iter().zip(sizes).any(|(x, n)| x.len() != n) {
            return Err(Error::Format("normalization block has the wrong layout".into()));
        }
        let s = &t[6].data;
        Ok(Normalizer {
            shallow_mean: t[0].data.clone(),
            shallow_std: t[1].data.clone(),
            phase_coeff_mean: t[2].data.clone(),
            phase_coeff_std: t[3].data.clone(),
            freq_coeff_mean: t[4].data.clone(),
            freq_coeff_std: t[5].data.clone(),
            phase_matrix_mean: s[0],
            phase_matrix_std: s[1],
            freq_matrix_mean: s[2],
            freq_matrix_std: s[3],
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn bundle(seed: f64, label: Label) -> FeatureBundle {
        FeatureBundle {
            shallow: ShallowFeatures {
                f0: seed,
                f1: 2.0 * seed,
                ff: -seed,
            },
            phase_matrix: FeatureMatrix {
                values: vec![seed; 81],
                m: 9,
                hop: 1,
                pad_count: 0,
            },
            freq_matrix: FeatureMatrix {
                values: vec![seed + 1.0; 27 * 27],
                m: 27,
                hop: 1,
                pad_count: 0,
            },
            phase_coeffs: FitCoefficients {
                coeffs: vec![seed; N_COEFFS],
                rmse: 0.0,
                flagged: false,
            },
            freq_coeffs: FitCoefficients {
                coeffs: vec![-seed; N_COEFFS],
                rmse: 0.0,
                flagged: false,
            },
            label: Some(label),
        }
    }

    #[test]
    fn standardizes_training_set() {
        let set: Vec<FeatureBundle> = (0..4).map(|i| bundle(i as f64, Label::Genuine)).collect();
        let norm = Normalizer::fit(&set).unwrap();
        assert!((norm.shallow_mean[0] - 1.5).abs() < 1e-12);
        let inputs: Vec<NetInput> = set.iter().map(|b| norm.apply(b, &FeatureMask::ALL)).collect();
        let mean: f64 = inputs.iter().map(|x| x.shallow.data[1]).sum::<f64>() / 4.0;
        let var: f64 = inputs.iter().map(|x| x.shallow.data[1].powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(Normalizer::fit(&[]).is_err());
    }

    #[test]
    fn constant_feature_keeps_unit_scale() {
        let set = vec![bundle(2.0, Label::Genuine), bundle(2.0, Label::Tampered)];
        let norm = Normalizer::fit(&set).unwrap();
        assert_eq!(norm.shallow_std, vec![1.0; 3]);
        let x = norm.apply(&set[0], &FeatureMask::ALL);
        assert!(x.shallow.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_zeroes_families() {
        let b = bundle(3.0, Label::Tampered);
        let x = Normalizer::identity().apply(&b, &FeatureMask::SHALLOW_ONLY);
        assert_eq!(x.shallow.data, vec![3.0, 6.0, -3.0]);
        assert!(x.phase_matrix.data.iter().all(|&v| v == 0.0));
        assert!(x.freq_coeffs.data.iter().all(|&v| v == 0.0));
        assert_eq!(x.freq_matrix.shape, vec![1, 27, 27]);
    }

    #[test]
    fn tensor_round_trip_and_validation() {
        let set: Vec<FeatureBundle> = (0..3).map(|i| bundle(i as f64 * 0.7, Label::Genuine)).collect();
        let norm = Normalizer::fit(&set).unwrap();
        assert_eq!(Normalizer::from_tensors(&norm.to_tensors()).unwrap(), norm);
        assert!(set[0].validate(9, 27).is_ok());
        assert!(set[0].validate(10, 27).is_err());
    }
}
