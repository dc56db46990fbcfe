//! MFCC-statistics speaker embedding and windowed similarity.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::audio::AudioBuffer;

pub const NUM_CEPS: usize = 13;
/// c0 tracks loudness and pauses, not the voice, so it stays out.
pub const EMBEDDING_DIM: usize = 2 * (NUM_CEPS - 1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccParams {
    pub frame_s: f64,
    pub hop_s: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub pre_emphasis: f64,
    /// Frames whose energy is below max frame energy times this are dropped.
    pub energy_floor: f64,
}

impl Default for MfccParams {
    fn default() -> Self {
        MfccParams {
            frame_s: 0.025,
            hop_s: 0.010,
            n_fft: 1024,
            n_mels: 26,
            f_low: 20.0,
            f_high: 8000.0,
            pre_emphasis: 0.97,
            energy_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityParams {
    pub window_s: f64,
    pub mfcc: MfccParams,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            window_s: 10.0,
            mfcc: MfccParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
    pub window: (f64, f64),
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

struct Mfcc {
    params: MfccParams,
    frame: usize,
    hop: usize,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl Mfcc {
    fn new(sr: f64, params: MfccParams) -> Self {
        let frame = (params.frame_s * sr).round() as usize;
        let hop = (params.hop_s * sr).round() as usize;
        let window = (0..frame)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos())
            .collect();
        let bins = params.n_fft / 2 + 1;
        let f_high = params.f_high.min(sr / 2.0);
        let (m_lo, m_hi) = (hz_to_mel(params.f_low), hz_to_mel(f_high));
        let edges: Vec<f64> = (0..params.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (params.n_mels + 1) as f64))
            .collect();
        let filters = (0..params.n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * sr / params.n_fft as f64;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect()
            })
            .collect();
        let n = params.n_mels as f64;
        let dct = (0..NUM_CEPS)
            .map(|k| {
                let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                (0..params.n_mels)
                    .map(|m| scale * (PI * k as f64 * (m as f64 + 0.5) / n).cos())
                    .collect()
            })
            .collect();
        Mfcc {
            params,
            frame,
            hop,
            window,
            filters,
            dct,
            fft: FftPlanner::new().plan_fft_forward(params.n_fft),
        }
    }

    /// Cepstra of frames above the energy floor.
    fn cepstra(&self, x: &[f64]) -> Vec<[f64; NUM_CEPS]> {
        if x.len() < self.frame {
            return Vec::new();
        }
        let emphasized: Vec<f64> = (0..x.len())
            .map(|i| x[i] - if i > 0 { self.params.pre_emphasis * x[i - 1] } else { 0.0 })
            .collect();
        let count = 1 + (x.len() - self.frame) / self.hop;
        let energies: Vec<f64> = (0..count)
            .map(|i| x[i * self.hop..i * self.hop + self.frame].iter().map(|v| v * v).sum())
            .collect();
        let max_energy = energies.iter().cloned().fold(0.0, f64::max);
        if max_energy <= 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut buf = vec![Complex::new(0.0, 0.0); self.params.n_fft];
        for (i, &e) in energies.iter().enumerate() {
            if e <= 0.0 || e < max_energy * self.params.energy_floor {
                continue;
            }
            let frame = &emphasized[i * self.hop..i * self.hop + self.frame];
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(if k < self.frame { frame[k] * self.window[k] } else { 0.0 }, 0.0);
            }
            self.fft.process(&mut buf);
            let log_mel: Vec<f64> = self
                .filters
                .iter()
                .map(|f| {
                    let e: f64 = f.iter().map(|&(k, w)| w * buf[k].norm_sqr()).sum();
                    e.max(1e-12).ln()
                })
                .collect();
            let mut c = [0.0; NUM_CEPS];
            for (k, row) in self.dct.iter().enumerate() {
                c[k] = row.iter().zip(&log_mel).map(|(a, b)| a * b).sum();
            }
            out.push(c);
        }
        out
    }
}

/// Means and standard deviations of c1..c12, unit-normalized. `None` when no
/// frame carries energy.
fn embed_samples(mfcc: &Mfcc, x: &[f64]) -> Option<Vec<f64>> {
    let ceps = mfcc.cepstra(x);
    if ceps.is_empty() {
        return None;
    }
    let n = ceps.len() as f64;
    let mut v = vec![0.0; EMBEDDING_DIM];
    for k in 1..NUM_CEPS {
        let mean = ceps.iter().map(|c| c[k]).sum::<f64>() / n;
        let var = ceps.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / n;
        v[k - 1] = mean;
        v[NUM_CEPS - 1 + k - 1] = var.sqrt();
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some(v.into_iter().map(|a| a / norm).collect())
}

pub fn embed(audio: &AudioBuffer, params: &MfccParams) -> Option<SpeakerEmbedding> {
    let mfcc = Mfcc::new(audio.sample_rate as f64, *params);
    let x: Vec<f64> = audio.samples.iter().map(|&s| s as f64 / 32768.0).collect();
    embed_samples(&mfcc, &x).map(|vector| SpeakerEmbedding {
        vector,
        window: (0.0, audio.duration_s()),
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDetail {
    pub start_s: f64,
    pub end_s: f64,
    /// False for silent windows, which are left out of the pairing.
    pub embedded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDetail {
    pub windows: Vec<WindowDetail>,
    /// Cosine similarity of each consecutive pair of embedded windows.
    pub pair_cosines: Vec<f64>,
}

/// 100 × mean cosine similarity of consecutive non-overlapping windows,
/// clamped to [0, 100]. A trailing partial window is ignored.
pub fn speaker_similarity(
    audio: &AudioBuffer,
    params: &SimilarityParams,
) -> Result<(f64, SimilarityDetail), EvalError> {
    let sr = audio.sample_rate as f64;
    let win = (params.window_s * sr).round() as usize;
    let count = audio.len().checked_div(win).unwrap_or(0);
    if count < 2 {
        return Err(EvalError::TooShort("audio too short for similarity".into()));
    }
    let mfcc = Mfcc::new(sr, params.mfcc);
    let x: Vec<f64> = audio.samples.iter().map(|&s| s as f64 / 32768.0).collect();
    let mut windows = Vec::with_capacity(count);
    let mut embeddings = Vec::new();
    for i in 0..count {
        let e = embed_samples(&mfcc, &x[i * win..(i + 1) * win]);
        windows.push(WindowDetail {
            start_s: (i * win) as f64 / sr,
            end_s: ((i + 1) * win) as f64 / sr,
            embedded: e.is_some(),
        });
        embeddings.extend(e);
    }
    if embeddings.len() < 2 {
        return Err(EvalError::TooShort("audio too short for similarity".into()));
    }
    let pair_cosines: Vec<f64> = embeddings.windows(2).map(|p| cosine(&p[0], &p[1])).collect();
    let mean = pair_cosines.iter().sum::<f64>() / pair_cosines.len() as f64;
    Ok((
        (100.0 * mean).clamp(0.0, 100.0),
        SimilarityDetail {
            windows,
            pair_cosines,
        },
    ))
}
