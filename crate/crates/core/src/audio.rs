//! Canonical audio buffer (mono, 16-bit PCM) and WAV/resampling helpers.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

/// Sample rate used throughout the pipeline.
pub const SAMPLE_RATE: u32 = 24_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("wav decode failed: {0}")]
    Decode(String),
    #[error("wav encode failed: {0}")]
    Encode(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Mono 16-bit PCM.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>) -> Self {
        AudioBuffer {
            sample_rate: SAMPLE_RATE,
            samples,
        }
    }

    pub fn silence(n: usize) -> Self {
        Self::new(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        if self.sample_rate == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.samples.iter().map(|&s| s as f32 / 32768.0).collect()
    }

    /// Quantizes float samples in [-1, 1] to 16-bit, clamping out-of-range values.
    pub fn from_f32(samples: &[f32], sample_rate: u32) -> Self {
        AudioBuffer {
            sample_rate,
            samples: samples.iter().map(|&s| quantize(s)).collect(),
        }
    }

    /// Resamples to [`SAMPLE_RATE`] if needed.
    pub fn into_canonical(self) -> Self {
        if self.sample_rate == SAMPLE_RATE {
            return self;
        }
        let resampled = resample(&self.to_f32(), self.sample_rate, SAMPLE_RATE);
        Self::from_f32(&resampled, SAMPLE_RATE)
    }

    /// RIFF/WAVE, PCM, mono, 16-bit. Output bytes depend only on the samples and rate.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::with_capacity(44 + self.samples.len() * 2));
        {
            // Writing into memory cannot fail short of allocation failure.
            let mut writer =
                hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav writer");
            let mut i16_writer = writer.get_i16_writer(self.samples.len() as u32);
            for &s in &self.samples {
                i16_writer.write_sample(s);
            }
            i16_writer.flush().expect("in-memory wav flush");
            writer.finalize().expect("in-memory wav finalize");
        }
        cursor.into_inner()
    }

    /// Decodes any PCM/float WAV, mixing channels down to mono. The native
    /// sample rate is kept; see [`AudioBuffer::into_canonical`].
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self, AudioError> {
        let reader =
            hound::WavReader::new(Cursor::new(bytes)).map_err(|e| AudioError::Decode(e.to_string()))?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .into_samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| AudioError::Decode(e.to_string()))?,
            hound::SampleFormat::Int => {
                let scale = 1.0 / (1i64 << (spec.bits_per_sample.max(1) - 1)) as f32;
                reader
                    .into_samples::<i32>()
                    .map(|s| s.map(|v| v as f32 * scale))
                    .collect::<Result<_, _>>()
                    .map_err(|e| AudioError::Decode(e.to_string()))?
            }
        };
        let mono: Vec<f32> = interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
            .collect();
        if spec.sample_format == hound::SampleFormat::Int && spec.bits_per_sample == 16 && channels == 1 {
            // Exact path for the canonical format.
            return Ok(AudioBuffer {
                sample_rate: spec.sample_rate,
                samples: mono.iter().map(|&s| (s * 32768.0).round() as i16).collect(),
            });
        }
        Ok(Self::from_f32(&mono, spec.sample_rate))
    }

    pub fn write_wav(&self, path: &Path) -> Result<(), AudioError> {
        std::fs::write(path, self.to_wav_bytes()).map_err(|source| AudioError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_wav(path: &Path) -> Result<Self, AudioError> {
        let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_wav_bytes(&bytes)
    }
}

pub fn quantize(s: f32) -> i16 {
    (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
pub fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let ratio = to as f64 / from as f64;
    // Cutoff in cycles per input sample, slightly below Nyquist of the lower rate.
    let cutoff = 0.5 * ratio.min(1.0) * 0.95;
    let half_width = SINC_ZERO_CROSSINGS / (2.0 * cutoff);
    let out_len = (input.len() as f64 * ratio).ceil() as usize;
    let last = input.len() as isize - 1;

    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as isize;
            let hi = ((t + half_width).floor() as isize).min(last);
            let mut acc = 0.0f64;
            for k in lo..=hi {
                let u = t - k as f64;
                let x = 2.0 * cutoff * u;
                let sinc = if x.abs() < 1e-12 {
                    1.0
                } else {
                    (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
                };
                let window = 0.5 + 0.5 * (std::f64::consts::PI * u / half_width).cos();
                acc += input[k as usize] as f64 * 2.0 * cutoff * sinc * window;
            }
            acc as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f32, rate: u32, secs: f32) -> Vec<f32> {
        let n = (rate as f32 * secs) as usize;
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f32::consts::PI * freq * i as f32 / rate as f32).sin())
            .collect()
    }

    #[test]
    fn wav_roundtrip_is_exact_and_canonical_header() {
        let buf = AudioBuffer::new(vec![0, 1, -1, i16::MAX, i16::MIN, 1234]);
        let bytes = buf.to_wav_bytes();
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(bytes.len(), 44 + 12);
        assert_eq!(AudioBuffer::from_wav_bytes(&bytes).unwrap(), buf);
    }

    #[test]
    fn stereo_float_wav_is_mixed_to_mono() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
            for _ in 0..10 {
                w.write_sample(0.5f32).unwrap();
                w.write_sample(-0.25f32).unwrap();
            }
            w.finalize().unwrap();
        }
        let buf = AudioBuffer::from_wav_bytes(&cursor.into_inner()).unwrap();
        assert_eq!(buf.sample_rate, 16_000);
        assert_eq!(buf.len(), 10);
        assert_eq!(buf.samples[0], quantize(0.125));
    }

    #[test]
    fn garbage_is_a_decode_error() {
        assert!(matches!(
            AudioBuffer::from_wav_bytes(b"not a wav"),
            Err(AudioError::Decode(_))
        ));
    }

    #[test]
    fn resample_preserves_tone_frequency_and_level() {
        let input = sine(1000.0, 16_000, 0.5);
        let out = resample(&input, 16_000, 24_000);
        assert_eq!(out.len(), 12_000);
        // Compare against an ideal 24 kHz sine away from the edges.
        let ideal = sine(1000.0, 24_000, 0.5);
        let max_err = out[600..11_400]
            .iter()
            .zip(&ideal[600..11_400])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 0.01, "max error {max_err}");
    }

    #[test]
    fn downsampling_removes_content_above_new_nyquist() {
        // 15 kHz at 48 kHz cannot survive conversion to 24 kHz.
        let input = sine(15_000.0, 48_000, 0.25);
        let out = resample(&input, 48_000, 24_000);
        let rms = (out[500..out.len() - 500].iter().map(|x| x * x).sum::<f32>()
            / (out.len() - 1000) as f32)
            .sqrt();
        assert!(rms < 0.01, "rms {rms}");
    }
}
