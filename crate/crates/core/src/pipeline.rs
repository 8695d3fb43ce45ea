//! End-to-end feature extraction for one clip and the shared pipeline
//! configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio_io::{resample, AudioClip};
use crate::corpus::CorpusConfig;
use crate::dsp::wrapped_diff;
use crate::enf::{design_bandpass, extract_with, BandpassSpec, EnfComponent, FilterCoefficients};
use crate::error::{Error, Result};
use crate::features::{
    build_matrix, fit_sum_of_sines, frame_length_for, shallow_stats, FitCoefficients, ShallowFeatures,
};
use crate::freq::{estimate_frequency, FrequencySequence};
use crate::model::{FeatureBundle, Label, TamperNetConfig, TrainConfig};
use crate::nnet::{read_blocks, write_blocks, Tensor};
use crate::phase::{estimate_phase_with, FramingParams, PhaseSequence, DEFAULT_N_DFT};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

/// Every knob of the pipeline, from audio to classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub profile: Profile,
    pub nominal_hz: f64,
    pub analysis_rate: u32,
    pub filter: BandpassSpec,
    pub n_dft: usize,
    pub fit_terms: usize,
    /// Longest clip the matrices are sized for, seconds.
    pub max_duration_s: f64,
    pub net: TamperNetConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
}

impl PipelineConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let nominal = 50.0;
        let rate = 1000;
        let mut cfg = PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            profile,
            nominal_hz: nominal,
            analysis_rate: rate,
            filter: BandpassSpec::for_nominal(nominal, rate),
            n_dft: DEFAULT_N_DFT,
            fit_terms: 6,
            max_duration_s: 0.0,
            net: TamperNetConfig::paper(0, 0),
            train: TrainConfig::default(),
            corpus: CorpusConfig::default(),
        };
        match profile {
            Profile::Paper => {
                cfg.max_duration_s = 40.0;
                cfg.corpus.duration_s = [20.0, 40.0];
            }
            Profile::Desk => {
                cfg.max_duration_s = 15.1;
                cfg.train.epochs = 30;
                cfg.train.split = [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
                cfg.corpus.n_genuine = 150;
                cfg.corpus.n_tampered = 150;
                cfg.net = TamperNetConfig::desk(0, 0);
            }
        }
        let (mp, mf) = cfg.matrix_dims().expect("default profile is consistent");
        cfg.net.m_phase = mp;
        cfg.net.m_freq = mf;
        cfg
    }

    /// Longest phase-difference and frequency sequences a clip of
    /// `max_duration_s` produces.
    pub fn max_sequence_lengths(&self) -> Result<(usize, usize)> {
        let n = (self.max_duration_s * self.analysis_rate as f64).ceil() as usize;
        let fp = FramingParams::new(self.analysis_rate, self.nominal_hz)?;
        let frames = fp.frame_count(n);
        let trim = 2 * self.analysis_rate as usize;
        if frames < 3 || n <= trim {
            return Err(Error::InvalidInput(format!(
                "maximum duration {} s is too short",
                self.max_duration_s
            )));
        }
        Ok((frames - 1, n - trim))
    }

    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        let (lp, lf) = self.max_sequence_lengths()?;
        Ok((frame_length_for(lp)?, frame_length_for(lf)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "config schema {} is not supported",
                self.schema_version
            )));
        }
        if self.filter.sample_rate != self.analysis_rate || self.filter.center_hz != self.nominal_hz {
            return Err(Error::InvalidInput(
                "filter rate and center must match the analysis rate and nominal frequency".into(),
            ));
        }
        if self.corpus.params.nominal_hz != self.nominal_hz {
            return Err(Error::InvalidInput(
                "corpus nominal frequency differs from the pipeline's".into(),
            ));
        }
        if self.fit_terms == 0 || self.fit_terms * 3 != crate::model::N_COEFFS {
            return Err(Error::InvalidInput(format!(
                "{} fit terms do not give {} coefficients",
                self.fit_terms,
                crate::model::N_COEFFS
            )));
        }
        let (mp, mf) = self.matrix_dims()?;
        if (mp, mf) != (self.net.m_phase, self.net.m_freq) {
            return Err(Error::InvalidInput(format!(
                "network matrix sizes ({}, {}) differ from the ({mp}, {mf}) implied by the maximum duration",
                self.net.m_phase, self.net.m_freq
            )));
        }
        self.filter.validate()?;
        self.net.validate()?;
        self.train.validate()
    }

    /// SHA-256 over the fields that determine extracted features and the
    /// network.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Hash of the feature-extraction settings only.
    pub fn feature_hash(&self) -> String {
        let key = serde_json::json!({
            "nominal_hz": self.nominal_hz,
            "analysis_rate": self.analysis_rate,
            "filter": self.filter,
            "n_dft": self.n_dft,
            "fit_terms": self.fit_terms,
        });
        hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("json")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Per-clip features before matrix framing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFeatures {
    pub id: String,
    pub label: Option<Label>,
    pub shallow: ShallowFeatures,
    /// Wrapped first differences of the high-resolution phase.
    pub phase_seq: Vec<f64>,
    /// Instantaneous frequency minus nominal, Hz.
    pub freq_seq: Vec<f64>,
    pub phase_coeffs: FitCoefficients,
    pub freq_coeffs: FitCoefficients,
}

/// All intermediate products for one clip.
#[derive(Debug, Clone)]
pub struct ClipAnalysis {
    pub enf: EnfComponent,
    pub phase: PhaseSequence,
    pub freq: FrequencySequence,
    pub features: ClipFeatures,
}

const FEATURE_MAGIC: &[u8; 8] = b"ENFTFEA1";

impl ClipFeatures {
    pub fn to_bundle(&self, m_phase: usize, m_freq: usize) -> Result<FeatureBundle> {
        Ok(FeatureBundle {
            shallow: self.shallow,
            phase_matrix: build_matrix(&self.phase_seq, m_phase)?,
            freq_matrix: build_matrix(&self.freq_seq, m_freq)?,
            phase_coeffs: self.phase_coeffs.clone(),
            freq_coeffs: self.freq_coeffs.clone(),
            label: self.label,
        })
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let header = serde_json::json!({
            "id": self.id,
            "label": self.label,
            "shallow": self.shallow,
            "phase_rmse": self.phase_coeffs.rmse,
            "phase_flagged": self.phase_coeffs.flagged,
            "freq_rmse": self.freq_coeffs.rmse,
            "freq_flagged": self.freq_coeffs.flagged,
            "meta": meta,
        });
        let blocks = [
            Tensor::vector(self.shallow.to_array().to_vec()),
            Tensor::vector(self.phase_seq.clone()),
            Tensor::vector(self.freq_seq.clone()),
            Tensor::vector(self.phase_coeffs.coeffs.clone()),
            Tensor::vector(self.freq_coeffs.coeffs.clone()),
            Tensor::vector(vec![self.phase_coeffs.rmse, self.freq_coeffs.rmse]),
        ];
        write_blocks(path, FEATURE_MAGIC, header, &blocks.iter().collect::<Vec<_>>())
    }

    /// Loads features and the header's `meta` value.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (header, blocks) = read_blocks(path, FEATURE_MAGIC)?;
        if blocks.len() != 6 || blocks[0].len() != 3 || blocks[5].len() != 2 {
            return Err(Error::Format(format!("{} has an unexpected layout", path.display())));
        }
        let h = &header.meta;
        let flag = |k: &str| h[k].as_bool().unwrap_or(false);
        let s = &blocks[0].data;
        let features = ClipFeatures {
            id: h["id"].as_str().unwrap_or_default().to_string(),
            label: serde_json::from_value(h["label"].clone())?,
            shallow: ShallowFeatures {
                f0: s[0],
                f1: s[1],
                ff: s[2],
            },
            phase_seq: blocks[1].data.clone(),
            freq_seq: blocks[2].data.clone(),
            phase_coeffs: FitCoefficients {
                coeffs: blocks[3].data.clone(),
                rmse: blocks[5].data[0],
                flagged: flag("phase_flagged"),
            },
            freq_coeffs: FitCoefficients {
                coeffs: blocks[4].data.clone(),
                rmse: blocks[5].data[1],
                flagged: flag("freq_flagged"),
            },
        };
        Ok((features, h["meta"].clone()))
    }
}

/// Feature extractor with the bandpass designed once.
pub struct Pipeline {
    pub config: PipelineConfig,
    coeffs: FilterCoefficients,
    framing: FramingParams,
}

impl Pipeline {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        Ok(Pipeline {
            coeffs: design_bandpass(&config.filter)?,
            framing: FramingParams::new(config.analysis_rate, config.nominal_hz)?,
            config: config.clone(),
        })
    }

    pub fn analyze(&self, clip: &AudioClip, label: Option<Label>) -> Result<ClipAnalysis> {
        let cfg = &self.config;
        if clip.duration() > cfg.max_duration_s {
            return Err(Error::InvalidInput(format!(
                "clip {} lasts {:.3} s, longer than the configured maximum of {} s",
                clip.source_id,
                clip.duration(),
                cfg.max_duration_s
            )));
        }
        let analysis = resample(clip, cfg.analysis_rate)?;
        let enf = extract_with(&analysis, &cfg.filter, &self.coeffs)?;
        let phase = estimate_phase_with(&enf, &self.framing, cfg.n_dft)?;
        let freq = estimate_frequency(&enf)?;
        let shallow = shallow_stats(&phase, &freq)?;
        let phase_seq = wrapped_diff(&phase.phi1);
        let freq_seq: Vec<f64> = freq.f_hil.iter().map(|f| f - cfg.nominal_hz).collect();
        let phase_coeffs = fit_sum_of_sines(&phase_seq, cfg.fit_terms)?;
        let freq_coeffs = fit_sum_of_sines(&freq_seq, cfg.fit_terms)?;
        Ok(ClipAnalysis {
            features: ClipFeatures {
                id: clip.source_id.clone(),
                label,
                shallow,
                phase_seq,
                freq_seq,
                phase_coeffs,
                freq_coeffs,
            },
            enf,
            phase,
            freq,
        })
    }

    pub fn extract(&self, clip: &AudioClip, label: Option<Label>) -> Result<ClipFeatures> {
        Ok(self.analyze(clip, label)?.features)
    }

    pub fn bundle(&self, features: &ClipFeatures) -> Result<FeatureBundle> {
        features.to_bundle(self.config.net.m_phase, self.config.net.m_freq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_dimensions() {
        let cfg = PipelineConfig::for_profile(Profile::Desk);
        cfg.validate().unwrap();
        let (lp, lf) = cfg.max_sequence_lengths().unwrap();
        assert_eq!((lp, lf), (745, 13_100));
        assert_eq!((cfg.net.m_phase, cfg.net.m_freq), (28, 115));
        let paper = PipelineConfig::for_profile(Profile::Paper);
        paper.validate().unwrap();
        assert_eq!(paper.net.effective_branch(), 1024);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::for_profile(Profile::Desk);
        let text = cfg.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn inconsistent_configs_rejected() {
        let mut cfg = PipelineConfig::for_profile(Profile::Desk);
        cfg.net.m_freq += 1;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::for_profile(Profile::Desk);
        cfg.analysis_rate = 1200;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn features_round_trip() {
        let f = ClipFeatures {
            id: "x".into(),
            label: Some(Label::Tampered),
            shallow: ShallowFeatures {
                f0: -1.0,
                f1: -2.0,
                ff: -3.5,
            },
            phase_seq: vec![0.1, -0.2, 1.0 / 3.0],
            freq_seq: vec![0.01; 7],
            phase_coeffs: FitCoefficients {
                coeffs: vec![0.5; 18],
                rmse: 0.25,
                flagged: false,
            },
            freq_coeffs: FitCoefficients {
                coeffs: vec![0.0; 18],
                rmse: 0.125,
                flagged: true,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.feat");
        f.save(&path, serde_json::json!({"hash": "h"})).unwrap();
        let (back, meta) = ClipFeatures::load(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(meta["hash"], "h");
    }
}
