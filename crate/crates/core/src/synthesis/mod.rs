//! Sentence-level synthesis with fixed persona inputs, and audiobook assembly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::backends::{BackendError, TtsBackend, TtsMode, TtsRequest};
use crate::hash::sha256_hex;
use crate::runlog::RequestLog;
use crate::story::{FileRef, ScriptLine, SegmentRef, SpeakerPersona};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("empty audiobook")]
    Empty,
    #[error("line {0} names unknown speaker {1}")]
    UnknownSpeaker(usize, String),
    #[error("line {0} has no sentence text")]
    MissingText(usize),
    #[error("synthesis of line {index} failed: {source}")]
    Backend { index: usize, source: BackendError },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub sentence_index: usize,
    pub speaker_id: String,
    pub audio: AudioBuffer,
}

impl AudioSegment {
    pub fn duration_s(&self) -> f64 {
        self.audio.duration_s()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyConfig {
    pub gap_ms: u32,
    pub speaker_change_gap_ms: u32,
    pub fade_ms: u32,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            gap_ms: 250,
            speaker_change_gap_ms: 500,
            fade_ms: 5,
        }
    }
}

fn ms_to_samples(ms: u32) -> usize {
    (ms as u64 * SAMPLE_RATE as u64 / 1000) as usize
}

/// Synthesizes one line. The request carries the persona's stored face,
/// caption and voice unchanged; their hashes go to the request log.
pub fn synthesize_line(
    line: &ScriptLine,
    text: &str,
    persona: &SpeakerPersona,
    tts: &dyn TtsBackend,
    log: Option<&RequestLog>,
) -> Result<AudioSegment, SynthesisError> {
    let req = TtsRequest {
        text: text.to_string(),
        instruction: line.instruction.clone(),
        face_image: persona.face_image.clone(),
        face_caption: persona.face_caption.clone(),
        voice_sample: persona.voice_sample.clone(),
        mode: TtsMode::SentenceSynthesis,
    };
    let result = tts.synthesize(&req);
    if let Some(log) = log {
        let fixed = persona.fixed_input_hashes();
        let outcome = match &result {
            Ok(r) => json!({"audio_samples": r.audio.len(), "audio_sha256": sha256_hex(&r.audio.to_wav_bytes())}),
            Err(e) => json!({"error": e.to_string()}),
        };
        log.record(
            "tts",
            &format!("sentence_synthesis/{:06}", line.sentence_index),
            json!({
                "mode": TtsMode::SentenceSynthesis.as_str(),
                "sentence_index": line.sentence_index,
                "speaker_id": persona.speaker_id,
                "text_sha256": sha256_hex(text.as_bytes()),
                "instruction": line.instruction,
                "face_image_sha256": fixed.face_image,
                "face_caption_sha256": fixed.face_caption,
                "voice_sample_sha256": fixed.voice_sample,
                "outcome": outcome,
            }),
        );
    }
    let audio = result
        .map_err(|source| SynthesisError::Backend {
            index: line.sentence_index,
            source,
        })?
        .audio;
    Ok(AudioSegment {
        sentence_index: line.sentence_index,
        speaker_id: persona.speaker_id.clone(),
        audio,
    })
}

/// Synthesizes all lines on a pool of `workers` threads; any failure aborts.
/// `texts[i]` is the text of sentence `i`.
pub fn synthesize_all(
    lines: &[ScriptLine],
    texts: &[String],
    personas: &[SpeakerPersona],
    tts: &dyn TtsBackend,
    log: Option<&RequestLog>,
    workers: usize,
) -> Result<Vec<AudioSegment>, SynthesisError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SynthesisError::Pool(e.to_string()))?;
    pool.install(|| {
        lines
            .par_iter()
            .map(|line| {
                let persona = personas
                    .iter()
                    .find(|p| p.speaker_id == line.speaker_id)
                    .ok_or_else(|| {
                        SynthesisError::UnknownSpeaker(line.sentence_index, line.speaker_id.clone())
                    })?;
                let text = texts
                    .get(line.sentence_index)
                    .ok_or(SynthesisError::MissingText(line.sentence_index))?;
                synthesize_line(line, text, persona, tts, log)
            })
            .collect()
    })
}

/// Fade length actually applied to a segment of `n` samples.
pub fn fade_len(n: usize, config: &AssemblyConfig) -> usize {
    ms_to_samples(config.fade_ms).min(n / 2)
}

/// Concatenates segments in order with silence between them and linear
/// fades at each segment's edges. Segment file refs point at
/// `segments/<index>.wav` holding the unfaded segment.
pub fn assemble(
    segments: &[AudioSegment],
    config: &AssemblyConfig,
) -> Result<(AudioBuffer, Vec<SegmentRef>), SynthesisError> {
    if segments.is_empty() {
        return Err(SynthesisError::Empty);
    }
    let mut out: Vec<i16> = Vec::new();
    let mut refs = Vec::with_capacity(segments.len());
    for (i, seg) in segments.iter().enumerate() {
        let gap = match i {
            0 => 0,
            _ if segments[i - 1].speaker_id != seg.speaker_id => {
                ms_to_samples(config.speaker_change_gap_ms)
            }
            _ => ms_to_samples(config.gap_ms),
        };
        out.resize(out.len() + gap, 0);
        let start = out.len();
        let n = seg.audio.len();
        let f = fade_len(n, config);
        out.extend(seg.audio.samples.iter().enumerate().map(|(k, &s)| {
            let gain = if k < f {
                k as f64 / f as f64
            } else if k >= n - f {
                (n - 1 - k) as f64 / f as f64
            } else {
                return s;
            };
            (s as f64 * gain).round() as i16
        }));
        refs.push(SegmentRef {
            sentence_index: seg.sentence_index,
            speaker_id: seg.speaker_id.clone(),
            file: FileRef::of(segment_path(seg.sentence_index), &seg.audio.to_wav_bytes()),
            duration_s: seg.duration_s(),
            num_samples: n,
            start_sample: start,
            gap_before_samples: gap,
        });
    }
    Ok((AudioBuffer::new(out), refs))
}

pub fn segment_path(sentence_index: usize) -> String {
    format!("segments/{sentence_index:04}.wav")
}
