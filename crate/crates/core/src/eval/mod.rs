//! Quantitative evaluation: pitch turning points, windowed speaker-embedding
//! similarity, the audio-judge MOS harness, and comparison reports.

mod embedding;
mod mllm;
mod pitch;
mod report;
mod turning;

use serde_json::json;
use thiserror::Error;

use crate::audio::AudioBuffer;

pub use embedding::{
    cosine, embed, speaker_similarity, MfccParams, SimilarityDetail, SimilarityParams,
    SpeakerEmbedding, WindowDetail, EMBEDDING_DIM, NUM_CEPS,
};
pub use mllm::{
    default_questions, judge_chunks, mllm_evaluate, parse_score, MllmParams, MllmResult,
    ANSWER_FORMAT, METRICS,
};
pub use pitch::{extract_pitch, PitchContour, PitchParams, MIN_PITCH_AUDIO_S};
pub use report::{compare_report, format_row, rank_marks, Comparison, EvalReport, Mark, SystemMetrics};
pub use turning::{count_turning_points, count_turning_points_with, TurningParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{0}")]
    TooShort(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub pitch: PitchParams,
    pub turning: TurningParams,
    pub similarity: SimilarityParams,
    pub mllm: MllmParams,
}

/// Similarity and turning points for one audiobook. Audio shorter than two
/// similarity windows gets no similarity score.
pub fn evaluate_audio(
    source: &str,
    audio: &AudioBuffer,
    params: &EvalParams,
) -> Result<EvalReport, EvalError> {
    let contour = extract_pitch(audio, &params.pitch)?;
    let mut notes = Vec::new();
    let (similarity, detail) = match speaker_similarity(audio, &params.similarity) {
        Ok((s, d)) => (Some(s), Some(d)),
        Err(EvalError::TooShort(msg)) => {
            notes.push(msg);
            (None, None)
        }
    };
    Ok(EvalReport {
        source: source.to_string(),
        duration_s: audio.duration_s(),
        speaker_similarity: similarity,
        similarity_detail: detail,
        turning_points: count_turning_points_with(&contour, params.turning.min_delta_hz),
        voiced_frames: contour.voiced.iter().filter(|v| **v).count(),
        total_frames: contour.voiced.len(),
        parameters: json!({
            "pitch": params.pitch,
            "turning": params.turning,
            "similarity": params.similarity,
            "similarity_scale": "100 x cosine",
            "window_pairing": "consecutive",
            "turning_points": "total per audiobook",
        }),
        mllm_scores: None,
        notes,
    })
}
