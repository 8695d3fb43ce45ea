//! WAV decoding/encoding and band-limited sample-rate reduction.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::dsp::{bessel_i0, kaiser_beta};
use crate::error::{Error, Result};

/// Mono audio evidence: samples in nominal range [−1, 1] at `sample_rate` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        let clip = AudioClip {
            samples,
            sample_rate,
            source_id: source_id.into(),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidInput(format!("clip '{}' is empty", self.source_id)));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} of clip '{}'", self.source_id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedCodec("unsupported wav feature".into()),
        other => Error::Wav(other.to_string()),
    }
}

/// Decodes a mono PCM16 or IEEE-float32 WAV file. Integer PCM is scaled by
/// 1/32768. Multichannel input is rejected rather than downmixed.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Multichannel(spec.channels));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec(format!("{fmt:?} {bits}-bit")));
        }
    };
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioClip::new(samples, spec.sample_rate, source_id)
}

/// Quantizes to 16-bit PCM: `round(x · 32768)` clamped to the i16 range.
pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono PCM16 WAV file.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &clip.samples {
        w.write_sample(to_pcm16(s)).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Rational polyphase resampler built from a Kaiser-windowed sinc.
///
/// The prototype spans `taps_per_phase` periods of the output rate, its
/// cutoff sits at 0.475 of the output rate (midway between the 0.45 passband
/// edge and the output Nyquist), and β is sized for `stopband_db + 10`.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    half_span: isize,
    phases: Vec<Vec<f64>>,
}

impl Resampler {
    pub const DEFAULT_TAPS_PER_PHASE: usize = 128;
    pub const DEFAULT_STOPBAND_DB: f64 = 80.0;

    pub fn new(input_rate: u32, output_rate: u32) -> Result<Self> {
        Self::with_params(
            input_rate,
            output_rate,
            Self::DEFAULT_TAPS_PER_PHASE,
            Self::DEFAULT_STOPBAND_DB,
        )
    }

    pub fn with_params(input_rate: u32, output_rate: u32, taps_per_phase: usize, stopband_db: f64) -> Result<Self> {
        if input_rate == 0 || output_rate == 0 {
            return Err(Error::InvalidInput("sample rates must be positive".into()));
        }
        if output_rate > input_rate {
            return Err(Error::InvalidInput(format!(
                "upsampling {input_rate} Hz -> {output_rate} Hz is not supported"
            )));
        }
        let g = gcd(input_rate as u64, output_rate as u64);
        let up = (output_rate as u64 / g) as usize;
        let down = (input_rate as u64 / g) as usize;

        // Everything below is in units of input samples.
        let ratio = output_rate as f64 / input_rate as f64;
        let cutoff = 0.475 * ratio;
        let half_width = 0.5 * taps_per_phase as f64 / ratio;
        let beta = kaiser_beta(stopband_db + 10.0);
        let i0_beta = bessel_i0(beta);
        let half_span = half_width.ceil() as isize;

        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps: Vec<f64> = (-half_span..=half_span)
                    .map(|k| {
                        let t = frac + k as f64;
                        if t.abs() >= half_width {
                            return 0.0;
                        }
                        let r = t / half_width;
                        let win = bessel_i0(beta * (1.0 - r * r).sqrt()) / i0_beta;
                        let arg = 2.0 * cutoff * t;
                        let sinc = if arg.abs() < 1e-12 {
                            1.0
                        } else {
                            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                        };
                        2.0 * cutoff * sinc * win
                    })
                    .collect();
                let s: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|v| *v /= s);
                taps
            })
            .collect();
        Ok(Resampler {
            up,
            down,
            half_span,
            phases,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let n_out = self.output_len(x.len());
        let len = x.len() as isize;
        (0..n_out)
            .map(|j| {
                let pos = j as u128 * self.down as u128;
                let base = (pos / self.up as u128) as isize;
                let phase = (pos % self.up as u128) as usize;
                let taps = &self.phases[phase];
                // taps[k + half_span] weighs x[base − k]
                let k_lo = (-self.half_span).max(base - len + 1);
                let k_hi = self.half_span.min(base);
                let mut acc = 0.0;
                for k in k_lo..=k_hi {
                    acc += taps[(k + self.half_span) as usize] * x[(base - k) as usize];
                }
                acc
            })
            .collect()
    }
}

/// Band-limited downsampling to `target_rate`; identity when rates match.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty clip".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let rs = Resampler::new(clip.sample_rate, target_rate)?;
    Ok(AudioClip {
        samples: rs.process(&clip.samples),
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: u32, secs: f64, amp: f64) -> Vec<f64> {
        let n = (secs * rate as f64).round() as usize;
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(-32768i16).unwrap();
        for _ in 1..8000 {
            w.write_sample(1000i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.sample_rate, 8000);
        assert_eq!(clip.len(), 8000);
        assert_eq!(clip.samples[0], -1.0);
        assert_eq!(clip.source_id, "one");
    }

    #[test]
    fn float32_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 1000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0.25f32, -0.5, 0.125] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&path).unwrap().samples, vec![0.25, -0.5, 0.125]);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("multichannel unsupported"), "{err}");
    }

    #[test]
    fn unsupported_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedCodec(_))));
    }

    #[test]
    fn missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_wav(dir.path().join("nope.wav")), Err(Error::Io { .. })));
        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
        assert!(read_wav(&bad).is_err());
    }

    #[test]
    fn identity_when_rates_match() {
        let clip = AudioClip::new(tone(50.0, 1000, 1.0, 0.5), 1000, "t").unwrap();
        assert_eq!(resample(&clip, 1000).unwrap(), clip);
    }

    #[test]
    fn upsampling_and_empty_rejected() {
        let clip = AudioClip::new(vec![0.0; 10], 1000, "t").unwrap();
        assert!(resample(&clip, 2000).is_err());
        let empty = AudioClip {
            samples: vec![],
            sample_rate: 1000,
            source_id: String::new(),
        };
        assert!(resample(&empty, 500).is_err());
    }

    #[test]
    fn ratio_arithmetic_44100() {
        let clip = AudioClip::new(vec![0.0; 194_481], 44_100, "z").unwrap();
        let out = resample(&clip, 1000).unwrap();
        assert!((out.len() as i64 - 4410).abs() <= 1);
    }

    #[test]
    fn tone_50hz_8000_to_1000() {
        let clip = AudioClip::new(tone(50.0, 8000, 10.0, 1.0), 8000, "t").unwrap();
        let out = resample(&clip, 1000).unwrap();
        assert!((out.len() as i64 - 10_000).abs() <= 1);
        let want = tone(50.0, 1000, 10.0, 1.0);
        // interior only: the kernel half-span is 64 output samples
        let (mut num, mut den) = (0.0, 0.0);
        for i in 200..9800 {
            num += out.samples[i] * want[i];
            den += want[i] * want[i];
        }
        let gain_db = 20.0 * (num / den).log10();
        assert!(gain_db.abs() < 0.1, "gain {gain_db} dB");
        let err = (200..9800)
            .map(|i| (out.samples[i] - want[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max sample error {err}");
    }
}
