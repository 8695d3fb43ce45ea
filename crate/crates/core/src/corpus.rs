//! Synthetic recordings with an embedded, slowly drifting ENF tone, plus
//! delete/insert tampering and manifest generation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio_io::{write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::model::Label;

pub const CROSSFADE_S: f64 = 0.005;
pub const MAX_DRIFT_HZ: f64 = 0.3;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnfModelParams {
    pub nominal_hz: f64,
    /// Stationary standard deviation of the frequency drift, Hz.
    pub drift_sigma: f64,
    /// Mean-reversion time of the drift, s.
    pub drift_tau: f64,
    /// ENF tone amplitude relative to the speech-like component's RMS.
    pub enf_amplitude: f64,
    pub speech_band: [f64; 2],
    /// Speech-like component RMS (full scale = 1).
    pub speech_rms: f64,
    /// Speech-to-broadband-noise ratio, dB.
    pub snr_db: f64,
    pub sample_rate: u32,
}

impl Default for EnfModelParams {
    fn default() -> Self {
        EnfModelParams {
            nominal_hz: 50.0,
            drift_sigma: 0.02,
            drift_tau: 20.0,
            enf_amplitude: 0.05,
            speech_band: [150.0, 3400.0],
            speech_rms: 0.1,
            snr_db: 30.0,
            sample_rate: 8000,
        }
    }
}

impl EnfModelParams {
    pub fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate as f64 / 2.0;
        if !(self.nominal_hz > 0.0 && self.nominal_hz + MAX_DRIFT_HZ < nyq) {
            return Err(Error::InvalidInput(format!(
                "nominal {} Hz does not fit below {nyq} Hz",
                self.nominal_hz
            )));
        }
        if self.drift_sigma < 0.0 || self.drift_tau <= 0.0 || self.enf_amplitude < 0.0 || self.speech_rms < 0.0 {
            return Err(Error::InvalidInput(
                "drift and amplitude parameters must be non-negative".into(),
            ));
        }
        let [lo, hi] = self.speech_band;
        if !(0.0 < lo && lo < hi && hi < nyq) {
            return Err(Error::InvalidInput(format!(
                "speech band {lo}..{hi} Hz outside (0, {nyq})"
            )));
        }
        Ok(())
    }
}

/// A recording together with its programmed ENF frequency track.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecording {
    pub clip: AudioClip,
    /// Instantaneous ENF frequency per sample, Hz.
    pub enf_freq: Vec<f64>,
}

/// Ornstein-Uhlenbeck drift around nominal, sampled per audio sample and
/// clamped to `nominal ± 0.3 Hz`.
pub fn ou_drift(n: usize, params: &EnfModelParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dt = 1.0 / params.sample_rate as f64;
    let decay = (-dt / params.drift_tau).exp();
    let kick = params.drift_sigma * (1.0 - decay * decay).sqrt();
    let mut d = params.drift_sigma * rng.sample::<f64, _>(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        d = (d * decay + kick * rng.sample::<f64, _>(StandardNormal)).clamp(-MAX_DRIFT_HZ, MAX_DRIFT_HZ);
        out.push(params.nominal_hz + d);
    }
    out
}

fn band_noise(n: usize, band: [f64; 2], fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < band[0] || f > band[1] {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|v| v.re / n as f64).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// `y = s + v + A·cos(2π∫f + φ₀)`: band-limited noise with a syllabic
/// envelope, white noise at the configured SNR, and the drifting ENF tone.
pub fn synthesize_recording(duration_s: f64, params: &EnfModelParams, seed: u64) -> Result<SynthRecording> {
    if !(5.0..=60.0).contains(&duration_s) {
        return Err(Error::InvalidInput(format!("duration {duration_s} s outside [5, 60]")));
    }
    params.validate()?;
    let fs = params.sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let enf_freq = ou_drift(n, params, &mut rng);
    let phi0 = rng.gen_range(-PI..PI);

    let mut speech = band_noise(n, params.speech_band, fs, &mut rng);
    let syllabic = rng.gen_range(3.0..8.0);
    let psi = rng.gen_range(0.0..2.0 * PI);
    for (k, s) in speech.iter_mut().enumerate() {
        let t = k as f64 / fs;
        *s *= 0.2 + 0.8 * (0.5 + 0.5 * (2.0 * PI * syllabic * t + psi).sin());
    }
    let s_rms = rms(&speech);
    if s_rms > 0.0 {
        let g = params.speech_rms / s_rms;
        speech.iter_mut().for_each(|v| *v *= g);
    }
    let noise_rms = params.speech_rms / 10f64.powf(params.snr_db / 20.0);
    let amp = params.enf_amplitude * params.speech_rms;

    let mut phase = phi0;
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let v: f64 = noise_rms * rng.sample::<f64, _>(StandardNormal);
        samples.push(speech[k] + v + amp * phase.cos());
        phase += 2.0 * PI * enf_freq[k] / fs;
    }
    Ok(SynthRecording {
        clip: AudioClip::new(samples, params.sample_rate, format!("synth-{seed}"))?,
        enf_freq,
    })
}

fn crossfade_len(fs: u32) -> usize {
    (CROSSFADE_S * fs as f64).round() as usize
}

/// `a ++ b` where the last `c` samples of `a` and the first `c` of `b` are
/// blended with complementary raised-cosine ramps.
fn splice(a: &[f64], b: &[f64], c: usize) -> Vec<f64> {
    let c = c.min(a.len()).min(b.len());
    let mut out = Vec::with_capacity(a.len() + b.len() - c);
    out.extend_from_slice(&a[..a.len() - c]);
    let tail = &a[a.len() - c..];
    for k in 0..c {
        let w_in = 0.5 * (1.0 - (PI * (k as f64 + 0.5) / c as f64).cos());
        out.push(tail[k] * (1.0 - w_in) + b[k] * w_in);
    }
    out.extend_from_slice(&b[c..]);
    out
}

/// Removes `[t0, t1)` seconds and joins the remainder with a 5 ms crossfade.
pub fn tamper_delete(clip: &AudioClip, t0: f64, t1: f64) -> Result<AudioClip> {
    let fs = clip.sample_rate as f64;
    let n = clip.len();
    let c = crossfade_len(clip.sample_rate);
    let a = (t0 * fs).round() as isize;
    let b = (t1 * fs).round() as isize;
    if a < 0 || b < a || b as usize + c > n {
        return Err(Error::InvalidInput(format!(
            "deletion [{t0}, {t1}) s outside a {:.3} s clip",
            clip.duration()
        )));
    }
    let (a, b) = (a as usize, b as usize);
    if a == b {
        return Ok(clip.clone());
    }
    let samples = splice(&clip.samples[..a + c], &clip.samples[b..], c);
    AudioClip::new(samples, clip.sample_rate, format!("{}-del", clip.source_id))
}

/// Splices a random `span`-second segment of `donor` in at `t` seconds,
/// with 5 ms crossfades at both joins. Returns the clip and the donor offset
/// in samples.
pub fn tamper_insert(clip: &AudioClip, donor: &AudioClip, t: f64, span: f64, seed: u64) -> Result<(AudioClip, usize)> {
    if donor.sample_rate != clip.sample_rate {
        return Err(Error::InvalidInput(format!(
            "donor rate {} Hz differs from clip rate {} Hz",
            donor.sample_rate, clip.sample_rate
        )));
    }
    let fs = clip.sample_rate as f64;
    let c = crossfade_len(clip.sample_rate);
    let len = (span * fs).round() as usize;
    if len > donor.len() || len < 2 * c {
        return Err(Error::InvalidInput(format!(
            "insert span {span} s does not fit the {:.3} s donor",
            donor.duration()
        )));
    }
    let p = (t * fs).round() as isize;
    if p < c as isize || p as usize + c > clip.len() {
        return Err(Error::InvalidInput(format!(
            "insert position {t} s outside a {:.3} s clip",
            clip.duration()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0..=donor.len() - len);
    let out = insert_segment(clip, &donor.samples[offset..offset + len], p as usize)?;
    Ok((out, offset))
}

fn insert_segment(clip: &AudioClip, seg: &[f64], p: usize) -> Result<AudioClip> {
    let c = crossfade_len(clip.sample_rate);
    let first = splice(&clip.samples[..p], seg, c);
    let samples = splice(&first, &clip.samples[p..], c);
    AudioClip::new(samples, clip.sample_rate, format!("{}-ins", clip.source_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TamperKind {
    Delete,
    Insert,
}

/// One edit. For deletions `[t0, t1)` is the removed span of the source;
/// for insertions `t0` is the insert point and `t1 − t0` the inserted span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperSpec {
    pub kind: TamperKind,
    pub t0: f64,
    pub t1: f64,
    pub donor_id: Option<String>,
    /// Splice instants in the output clip, seconds.
    pub splice_times: Vec<f64>,
    #[serde(default)]
    pub hard_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperConfig {
    pub delete_fraction: f64,
    pub min_len_s: f64,
    pub max_len_s: f64,
    /// Splices land inside this fraction range of the output duration.
    pub splice_region: [f64; 2],
    /// Share of inserts whose donor is the clip itself, offset by whole
    /// ENF periods.
    pub hard_negative_fraction: f64,
}

impl Default for TamperConfig {
    fn default() -> Self {
        TamperConfig {
            delete_fraction: 0.5,
            min_len_s: 0.5,
            max_len_s: 5.0,
            splice_region: [0.3, 0.7],
            hard_negative_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_genuine: usize,
    pub n_tampered: usize,
    /// Output clip durations are drawn uniformly from this range for both
    /// classes.
    pub duration_s: [f64; 2],
    pub params: EnfModelParams,
    pub tamper: TamperConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 1,
            n_genuine: 100,
            n_tampered: 100,
            duration_s: [11.0, 15.0],
            params: EnfModelParams::default(),
            tamper: TamperConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_genuine == 0 || self.n_tampered == 0 {
            return Err(Error::InvalidInput("at least one clip per class is required".into()));
        }
        let [lo, hi] = self.duration_s;
        let t = &self.tamper;
        if !(lo <= hi && t.min_len_s >= 0.5 && t.min_len_s <= t.max_len_s) {
            return Err(Error::InvalidInput(
                "inconsistent duration or tamper-length ranges".into(),
            ));
        }
        if lo - t.max_len_s < 5.0 || hi + t.max_len_s > 60.0 {
            return Err(Error::InvalidInput(format!(
                "sources for {lo}..{hi} s clips with edits up to {} s fall outside [5, 60] s",
                t.max_len_s
            )));
        }
        let [r0, r1] = t.splice_region;
        if !(0.0 < r0 && r0 < r1 && r1 < 1.0) {
            return Err(Error::InvalidInput("splice region must lie inside (0, 1)".into()));
        }
        self.params.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub duration_s: f64,
    pub tamper: Option<TamperSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: CorpusConfig,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: CorpusManifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "manifest schema {} is not supported",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the manifest JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("manifest serializes")))
    }
}

/// Per-entry seed derived from the corpus seed.
pub fn entry_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds clip `index` of the corpus in memory.
pub fn make_entry(cfg: &CorpusConfig, index: usize, label: Label) -> Result<(AudioClip, ManifestEntry)> {
    let seed = entry_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.duration_s;
    let out_dur = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let id = format!("clip{index:05}");
    let t = &cfg.tamper;
    let [r0, r1] = t.splice_region;
    let (clip, tamper) = match label {
        Label::Genuine => (synthesize_recording(out_dur, &cfg.params, seed ^ 1)?.clip, None),
        Label::Tampered => {
            let edit = if t.max_len_s > t.min_len_s {
                rng.gen_range(t.min_len_s..t.max_len_s)
            } else {
                t.min_len_s
            };
            if rng.gen::<f64>() < t.delete_fraction {
                let src = synthesize_recording(out_dur + edit, &cfg.params, seed ^ 1)?.clip;
                let t0 = out_dur * rng.gen_range(r0..r1);
                let out = tamper_delete(&src, t0, t0 + edit)?;
                (
                    out,
                    Some(TamperSpec {
                        kind: TamperKind::Delete,
                        t0,
                        t1: t0 + edit,
                        donor_id: None,
                        splice_times: vec![t0],
                        hard_negative: false,
                    }),
                )
            } else {
                let src = synthesize_recording(out_dur - edit, &cfg.params, seed ^ 1)?.clip;
                // both splice points inside the region of the output
                let lo_t = out_dur * r0;
                let hi_t = (out_dur * r1 - edit).max(lo_t);
                let t0 = if hi_t > lo_t { rng.gen_range(lo_t..hi_t) } else { lo_t };
                let hard = rng.gen::<f64>() < t.hard_negative_fraction;
                let (out, donor_id) = if hard {
                    // the clip's own ENF, re-entered a whole number of periods later
                    let period = (cfg.params.sample_rate as f64 / cfg.params.nominal_hz).round() as usize;
                    let fs = src.sample_rate as f64;
                    let p = ((t0 * fs / period as f64).round() as usize * period).max(period);
                    let len = (edit * fs).round() as usize;
                    let k = rng.gen_range(0..=src.len().saturating_sub(len) / period);
                    let seg = &src.samples[k * period..k * period + len];
                    (insert_segment(&src, seg, p)?, format!("{id}-self"))
                } else {
                    let donor = synthesize_recording(edit.max(5.0), &cfg.params, seed ^ 2)?.clip;
                    let (out, _) = tamper_insert(&src, &donor, t0, edit, seed ^ 3)?;
                    (out, format!("{id}-donor"))
                };
                (
                    out,
                    Some(TamperSpec {
                        kind: TamperKind::Insert,
                        t0,
                        t1: t0 + edit,
                        donor_id: Some(donor_id),
                        splice_times: vec![t0, t0 + edit],
                        hard_negative: hard,
                    }),
                )
            }
        }
    };
    let mut clip = clip;
    clip.source_id = id.clone();
    let entry = ManifestEntry {
        path: PathBuf::from(format!("{id}.wav")),
        id,
        label,
        duration_s: clip.duration(),
        tamper,
        seed,
    };
    Ok((clip, entry))
}

/// Labels in corpus order: a seeded shuffle of the class counts.
pub fn corpus_labels(cfg: &CorpusConfig) -> Vec<Label> {
    let mut labels: Vec<Label> = std::iter::repeat(Label::Genuine)
        .take(cfg.n_genuine)
        .chain(std::iter::repeat(Label::Tampered).take(cfg.n_tampered))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1abe1);
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    labels
}

/// Writes every clip as PCM16 WAV under `out_dir` plus `manifest.json`.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let labels = corpus_labels(cfg);
    let entries: Vec<ManifestEntry> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let (clip, entry) = make_entry(cfg, i, label)?;
            write_wav(&out_dir.join(&entry.path), &clip)?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    let manifest = CorpusManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        entries,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> EnfModelParams {
        EnfModelParams {
            sample_rate: 1000,
            speech_band: [150.0, 400.0],
            ..EnfModelParams::default()
        }
    }

    #[test]
    fn deterministic_synthesis() {
        let a = synthesize_recording(6.0, &quiet(), 4).unwrap();
        let b = synthesize_recording(6.0, &quiet(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clip.len(), 6000);
        assert_ne!(a.clip, synthesize_recording(6.0, &quiet(), 5).unwrap().clip);
        assert!(synthesize_recording(4.0, &quiet(), 4).is_err());
    }

    #[test]
    fn drift_stays_in_band() {
        let p = EnfModelParams {
            drift_sigma: 0.2,
            drift_tau: 1.0,
            ..quiet()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = ou_drift(200_000, &p, &mut rng);
        assert!(f.iter().all(|v| (v - 50.0).abs() <= MAX_DRIFT_HZ));
        let small = ou_drift(200_000, &quiet(), &mut rng);
        let sd = rms(&small.iter().map(|v| v - 50.0).collect::<Vec<_>>());
        assert!(sd > 0.002 && sd < 0.06, "{sd}");
    }

    #[test]
    fn delete_lengths_and_identity() {
        let clip = AudioClip::new((0..30_000).map(|k| (k as f64 * 0.01).sin()).collect(), 1000, "c").unwrap();
        let out = tamper_delete(&clip, 10.0, 12.0).unwrap();
        assert_eq!(out.len(), 28_000);
        assert_eq!(&out.samples[..10_000], &clip.samples[..10_000]);
        assert_eq!(&out.samples[10_005..], &clip.samples[12_005..]);
        assert_eq!(tamper_delete(&clip, 5.0, 5.0).unwrap(), clip);
        assert!(tamper_delete(&clip, 12.0, 10.0).is_err());
        assert!(tamper_delete(&clip, 25.0, 31.0).is_err());
    }

    #[test]
    fn insert_lengths_and_errors() {
        let clip = AudioClip::new(vec![0.5; 20_000], 1000, "c").unwrap();
        let donor = AudioClip::new(vec![-0.5; 8_000], 1000, "d").unwrap();
        let (out, offset) = tamper_insert(&clip, &donor, 7.0, 3.0, 1).unwrap();
        assert_eq!(out.len(), 23_000 - 10);
        assert!(offset <= 5_000);
        assert_eq!(out.samples[7_500], -0.5);
        assert_eq!(out.samples[1_000], 0.5);
        assert_eq!(out.samples[20_000], 0.5);
        let other_rate = AudioClip::new(vec![0.0; 8_000], 2000, "d").unwrap();
        assert!(tamper_insert(&clip, &other_rate, 7.0, 3.0, 1).is_err());
        assert!(tamper_insert(&clip, &donor, 7.0, 9.0, 1).is_err());
    }

    #[test]
    fn crossfade_is_continuous() {
        let a = vec![1.0; 100];
        let b = vec![-1.0; 100];
        let s = splice(&a, &b, 10);
        assert_eq!(s.len(), 190);
        for w in s.windows(2) {
            assert!((w[1] - w[0]).abs() < 0.35);
        }
    }

    #[test]
    fn corpus_generation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n_genuine: 3,
            n_tampered: 3,
            duration_s: [7.0, 8.0],
            params: quiet(),
            tamper: TamperConfig {
                max_len_s: 1.5,
                hard_negative_fraction: 0.5,
                ..TamperConfig::default()
            },
            ..CorpusConfig::default()
        };
        let m = generate_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 6);
        assert_eq!(m.entries.iter().filter(|e| e.label == Label::Tampered).count(), 3);
        for e in &m.entries {
            assert!(dir.path().join(&e.path).exists());
            assert_eq!(e.tamper.is_some(), e.label == Label::Tampered);
            assert!(e.duration_s > 6.9 && e.duration_s < 8.1, "{}", e.duration_s);
        }
        let loaded = CorpusManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, m);
        let dir2 = tempfile::tempdir().unwrap();
        assert_eq!(generate_corpus(&cfg, dir2.path()).unwrap().hash(), m.hash());
        let bad = CorpusConfig { n_genuine: 0, ..cfg };
        assert!(generate_corpus(&bad, dir.path()).is_err());
    }
}
