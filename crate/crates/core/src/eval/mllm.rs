//! Audio-judge MOS harness.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::AudioBuffer;
use crate::backends::schema::strip_code_fence;
use crate::backends::{JudgeBackend, JudgeRequest};

pub const METRICS: [&str; 4] = ["CharCon", "MOS-Q", "MOS-E", "MOS-S"];

const DEFAULT_QUESTIONS: &str = include_str!("../../data/judge_questions.json");

/// Appended to every question so answers are machine-readable.
pub const ANSWER_FORMAT: &str =
    " Answer with a JSON object {\"score\": <number from 1 to 5>} and nothing else.";

pub fn default_questions() -> IndexMap<String, String> {
    serde_json::from_str(DEFAULT_QUESTIONS).expect("shipped judge questions parse")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MllmParams {
    /// Largest WAV the judge accepts in one request.
    pub upload_limit_bytes: usize,
    pub chunk_s: f64,
}

impl Default for MllmParams {
    fn default() -> Self {
        MllmParams {
            upload_limit_bytes: 25 * 1024 * 1024,
            chunk_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MllmResult {
    /// Mean score per metric; metrics with no parseable answer are absent.
    pub scores: IndexMap<String, f64>,
    pub per_chunk: IndexMap<String, Vec<Option<f64>>>,
    pub chunks: usize,
    pub warnings: Vec<String>,
}

/// A score in [1, 5] from a JSON `{"score": x}` answer or the first number
/// in free text.
pub fn parse_score(answer: &str) -> Option<f64> {
    let body = strip_code_fence(answer);
    let value = match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(obj)) => obj.get("score").and_then(Value::as_f64),
        Ok(Value::Number(n)) => n.as_f64(),
        _ => first_number(body),
    }?;
    (1.0..=5.0).contains(&value).then_some(value)
}

fn first_number(text: &str) -> Option<f64> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let tail = &text[start..];
    let end = tail
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || (c == '.' && tail[i + 1..].starts_with(|d: char| d.is_ascii_digit()))))
        .map(|(i, _)| i)
        .unwrap_or(tail.len());
    tail[..end].parse().ok()
}

/// Splits audio into WAV chunks the judge will accept.
pub fn judge_chunks(audio: &AudioBuffer, params: &MllmParams) -> Vec<Vec<u8>> {
    let whole = audio.to_wav_bytes();
    if whole.len() <= params.upload_limit_bytes {
        return vec![whole];
    }
    let per_chunk = ((params.chunk_s * audio.sample_rate as f64) as usize)
        .min((params.upload_limit_bytes.saturating_sub(44)) / 2)
        .max(1);
    audio
        .samples
        .chunks(per_chunk)
        .map(|c| AudioBuffer {
            sample_rate: audio.sample_rate,
            samples: c.to_vec(),
        }
        .to_wav_bytes())
        .collect()
}

pub fn mllm_evaluate(
    audio: &AudioBuffer,
    judge: &dyn JudgeBackend,
    questions: &IndexMap<String, String>,
    params: &MllmParams,
) -> MllmResult {
    let chunks = judge_chunks(audio, params);
    let mut result = MllmResult {
        chunks: chunks.len(),
        ..MllmResult::default()
    };
    for metric in METRICS {
        let Some(question) = questions.get(metric) else {
            result.warnings.push(format!("{metric}: no question configured"));
            continue;
        };
        let mut per_chunk = Vec::with_capacity(chunks.len());
        for (i, wav) in chunks.iter().enumerate() {
            let req = JudgeRequest {
                tag: format!("{metric}/{i}"),
                question: format!("{question}{ANSWER_FORMAT}"),
                audio_wav: wav.clone(),
            };
            let mut score = None;
            let mut last = String::new();
            for _attempt in 0..2 {
                match judge.ask(&req) {
                    Ok(answer) => match parse_score(&answer) {
                        Some(s) => {
                            score = Some(s);
                            break;
                        }
                        None => last = format!("unparseable answer {:?}", answer.trim()),
                    },
                    Err(e) => last = e.to_string(),
                }
            }
            if score.is_none() {
                let warning = format!("{metric} chunk {i}: {last}");
                tracing::warn!(%warning, "judge score missing");
                result.warnings.push(warning);
            }
            per_chunk.push(score);
        }
        let got: Vec<f64> = per_chunk.iter().flatten().copied().collect();
        if !got.is_empty() {
            result
                .scores
                .insert(metric.to_string(), got.iter().sum::<f64>() / got.len() as f64);
        }
        result.per_chunk.insert(metric.to_string(), per_chunk);
    }
    result
}
