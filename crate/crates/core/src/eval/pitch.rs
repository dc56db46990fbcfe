//! YIN pitch tracking.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::audio::AudioBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchParams {
    pub frame_hop_s: f64,
    pub window_s: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Cumulative-mean-normalized difference threshold for voicing.
    pub threshold: f64,
    /// Frames quieter than this RMS (full scale = 1) are unvoiced.
    pub silence_rms: f64,
    /// Frames whose quietest quarter has less than this fraction of the
    /// loudest quarter's RMS straddle an onset or offset, where the
    /// difference function is biased; they are left unvoiced.
    pub stationarity: f64,
}

impl Default for PitchParams {
    fn default() -> Self {
        PitchParams {
            frame_hop_s: 0.010,
            window_s: 0.040,
            f_min: 50.0,
            f_max: 600.0,
            threshold: 0.2,
            silence_rms: 1e-4,
            stationarity: 0.5,
        }
    }
}

/// Frame-level F0 track; unvoiced frames hold 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchContour {
    pub frame_hop_s: f64,
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0_hz
            .iter()
            .zip(&self.voiced)
            .filter(|(_, v)| **v)
            .map(|(f, _)| *f)
    }

    pub fn median_f0(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced_f0().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            (v[m - 1] + v[m]) / 2.0
        })
    }
}

pub const MIN_PITCH_AUDIO_S: f64 = 0.1;

struct Yin {
    frame: usize,
    tau_min: usize,
    tau_max: usize,
    integration: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n_fft: usize,
}

impl Yin {
    fn new(sr: f64, p: &PitchParams) -> Self {
        let frame = (p.window_s * sr).round() as usize;
        let tau_min = (sr / p.f_max).floor().max(2.0) as usize;
        let tau_max = (sr / p.f_min).ceil() as usize;
        // One extra lag so the parabola around tau_max is defined.
        let integration = frame - tau_max - 1;
        let n_fft = frame.next_power_of_two();
        let mut planner = FftPlanner::new();
        Yin {
            frame,
            tau_min,
            tau_max,
            integration,
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
            n_fft,
        }
    }

    /// Difference function d(tau) for tau in 0..=tau_max+1.
    fn difference(&self, x: &[f64]) -> Vec<f64> {
        let w = self.integration;
        let mut a: Vec<Complex<f64>> = (0..self.n_fft)
            .map(|i| Complex::new(if i < w { x[i] } else { 0.0 }, 0.0))
            .collect();
        let mut b: Vec<Complex<f64>> = (0..self.n_fft)
            .map(|i| Complex::new(if i < x.len() { x[i] } else { 0.0 }, 0.0))
            .collect();
        self.fwd.process(&mut a);
        self.fwd.process(&mut b);
        for (ai, bi) in a.iter_mut().zip(&b) {
            *ai = ai.conj() * bi;
        }
        self.inv.process(&mut a);
        let scale = 1.0 / self.n_fft as f64;

        let mut prefix = vec![0.0; x.len() + 1];
        for (i, v) in x.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v * v;
        }
        let energy = |start: usize| prefix[start + w] - prefix[start];
        let e0 = energy(0);
        (0..=self.tau_max + 1)
            .map(|tau| (e0 + energy(tau) - 2.0 * a[tau].re * scale).max(0.0))
            .collect()
    }

    fn estimate(&self, x: &[f64], sr: f64, p: &PitchParams) -> Option<f64> {
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        if rms < p.silence_rms {
            return None;
        }
        let q = x.len() / 4;
        let quarter_rms: Vec<f64> = x
            .chunks(q)
            .take(4)
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let loudest = quarter_rms.iter().copied().fold(0.0, f64::max);
        let quietest = quarter_rms.iter().copied().fold(f64::INFINITY, f64::min);
        if quietest < p.stationarity * loudest {
            return None;
        }
        let d = self.difference(x);
        let mut cmnd = vec![1.0; d.len()];
        let mut running = 0.0;
        for tau in 1..d.len() {
            running += d[tau];
            cmnd[tau] = if running > 0.0 {
                d[tau] * tau as f64 / running
            } else {
                1.0
            };
        }
        let mut tau = self.tau_min;
        while tau <= self.tau_max && cmnd[tau] >= p.threshold {
            tau += 1;
        }
        if tau > self.tau_max {
            return None;
        }
        while tau < self.tau_max && cmnd[tau + 1] < cmnd[tau] {
            tau += 1;
        }
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let f0 = sr / (tau as f64 + shift);
        (p.f_min..=p.f_max).contains(&f0).then_some(f0)
    }
}

pub fn extract_pitch(audio: &AudioBuffer, params: &PitchParams) -> Result<PitchContour, EvalError> {
    if audio.duration_s() < MIN_PITCH_AUDIO_S {
        return Err(EvalError::TooShort(format!(
            "pitch tracking needs at least {MIN_PITCH_AUDIO_S} s of audio"
        )));
    }
    let sr = audio.sample_rate as f64;
    let yin = Yin::new(sr, params);
    let hop = (params.frame_hop_s * sr).round() as usize;
    let x: Vec<f64> = audio.samples.iter().map(|&s| s as f64 / 32768.0).collect();
    let frames = if x.len() >= yin.frame {
        1 + (x.len() - yin.frame) / hop
    } else {
        0
    };
    let mut f0_hz = Vec::with_capacity(frames);
    let mut voiced = Vec::with_capacity(frames);
    for i in 0..frames {
        let start = i * hop;
        match yin.estimate(&x[start..start + yin.frame], sr, params) {
            Some(f) => {
                f0_hz.push(f);
                voiced.push(true);
            }
            None => {
                f0_hz.push(0.0);
                voiced.push(false);
            }
        }
    }
    Ok(PitchContour {
        frame_hop_s: params.frame_hop_s,
        f0_hz,
        voiced,
    })
}
