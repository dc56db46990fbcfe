//! Pitch turning points.

use serde::{Deserialize, Serialize};

use super::pitch::PitchContour;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurningParams {
    /// F0 steps no larger than this (Hz) count as zero steps. Absorbs
    /// frame-to-frame estimator jitter on steady tones (about 0.005 Hz).
    pub min_delta_hz: f64,
}

impl Default for TurningParams {
    fn default() -> Self {
        TurningParams { min_delta_hz: 0.05 }
    }
}

/// Counts strict sign changes of the frame-to-frame F0 difference within
/// each maximal voiced run. A zero difference keeps the previous sign; runs
/// shorter than three frames contribute nothing. Summed over runs.
pub fn count_turning_points(contour: &PitchContour) -> u64 {
    count_turning_points_with(contour, 0.0)
}

/// As [`count_turning_points`], treating steps with `|ΔF0| <= min_delta_hz` as zero.
pub fn count_turning_points_with(contour: &PitchContour, min_delta_hz: f64) -> u64 {
    let mut total = 0;
    let mut start = 0;
    let n = contour.voiced.len().min(contour.f0_hz.len());
    while start < n {
        if !contour.voiced[start] {
            start += 1;
            continue;
        }
        let mut end = start;
        while end < n && contour.voiced[end] {
            end += 1;
        }
        total += run_turning_points(&contour.f0_hz[start..end], min_delta_hz);
        start = end;
    }
    total
}

fn run_turning_points(run: &[f64], min_delta_hz: f64) -> u64 {
    if run.len() < 3 {
        return 0;
    }
    let mut count = 0;
    let mut sign = 0i8;
    for w in run.windows(2) {
        let d = w[1] - w[0];
        let s = if d > min_delta_hz {
            1
        } else if d < -min_delta_hz {
            -1
        } else {
            0
        };
        if s != 0 {
            if sign != 0 && s != sign {
                count += 1;
            }
            sign = s;
        }
    }
    count
}
