use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::hash::sha256_hex;

/// Bounds on a persona's voice sample, in seconds.
pub const VOICE_SAMPLE_MIN_S: f64 = 1.0;
pub const VOICE_SAMPLE_MAX_S: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("invalid persona {speaker_id}: {reason}")]
    InvalidPersona { speaker_id: String, reason: String },
    #[error("invalid persona set: {0}")]
    InvalidPersonaSet(String),
    #[error("invalid script line {sentence_index}: {reason}")]
    InvalidLine { sentence_index: usize, reason: String },
    #[error("inconsistent manifest: {0}")]
    Inconsistent(String),
}

/// One character's fixed multimodal identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerPersona {
    pub speaker_id: String,
    pub name_or_role: String,
    pub caption: String,
    pub face_image: Vec<u8>,
    pub face_format: String,
    pub face_caption: String,
    pub voice_sample: AudioBuffer,
    pub is_narrator: bool,
}

impl SpeakerPersona {
    pub fn validate(&self) -> Result<(), ManifestError> {
        let fail = |reason: &str| ManifestError::InvalidPersona {
            speaker_id: self.speaker_id.clone(),
            reason: reason.to_string(),
        };
        if self.speaker_id.is_empty() {
            return Err(fail("empty speaker id"));
        }
        if self.caption.trim().is_empty() {
            return Err(fail("empty caption"));
        }
        if self.face_caption.trim().is_empty() {
            return Err(fail("empty face caption"));
        }
        if self.face_image.is_empty() {
            return Err(fail("missing face image"));
        }
        let d = self.voice_sample.duration_s();
        if !(VOICE_SAMPLE_MIN_S..=VOICE_SAMPLE_MAX_S).contains(&d) {
            return Err(fail(&format!("voice sample lasts {d:.3} s")));
        }
        Ok(())
    }

    pub fn voice_wav(&self) -> Vec<u8> {
        self.voice_sample.to_wav_bytes()
    }

    /// Hashes of the three inputs that stay fixed for every line this persona reads.
    pub fn fixed_input_hashes(&self) -> PersonaInputHashes {
        PersonaInputHashes {
            face_image: sha256_hex(&self.face_image),
            face_caption: sha256_hex(self.face_caption.as_bytes()),
            voice_sample: sha256_hex(&self.voice_wav()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PersonaInputHashes {
    pub face_image: String,
    pub face_caption: String,
    pub voice_sample: String,
}

/// Checks per-persona invariants plus: unique ids and exactly one narrator.
pub fn validate_persona_set(personas: &[SpeakerPersona]) -> Result<(), ManifestError> {
    if personas.is_empty() {
        return Err(ManifestError::InvalidPersonaSet("no personas".into()));
    }
    let mut seen = HashSet::new();
    for p in personas {
        p.validate()?;
        if !seen.insert(p.speaker_id.as_str()) {
            return Err(ManifestError::InvalidPersonaSet(format!(
                "duplicate speaker id {}",
                p.speaker_id
            )));
        }
    }
    let narrators = personas.iter().filter(|p| p.is_narrator).count();
    if narrators != 1 {
        return Err(ManifestError::InvalidPersonaSet(format!(
            "{narrators} narrators, expected exactly one"
        )));
    }
    Ok(())
}

/// One sentence bound to a speaker and a reading instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub sentence_index: usize,
    pub speaker_id: String,
    pub instruction: String,
}

impl ScriptLine {
    pub fn validate(&self, persona_ids: &HashSet<&str>) -> Result<(), ManifestError> {
        let fail = |reason: String| ManifestError::InvalidLine {
            sentence_index: self.sentence_index,
            reason,
        };
        if !persona_ids.contains(self.speaker_id.as_str()) {
            return Err(fail(format!("unknown speaker {}", self.speaker_id)));
        }
        if self.instruction.trim().is_empty() {
            return Err(fail("empty instruction".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackCounters {
    pub attribution_fallback: usize,
    pub instruction_fallback: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindowing {
    pub applied: bool,
    pub radius: usize,
    pub budget_chars: usize,
}

/// A file written next to the manifest, by relative path and content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: impl Into<String>, bytes: &[u8]) -> Self {
        FileRef {
            path: path.into(),
            sha256: sha256_hex(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRef {
    pub speaker_id: String,
    pub name_or_role: String,
    pub is_narrator: bool,
    pub persona: FileRef,
    pub face_image: FileRef,
    pub voice_sample: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub sentence_index: usize,
    pub speaker_id: String,
    pub file: FileRef,
    pub duration_s: f64,
    pub num_samples: usize,
    /// First sample of this segment in the assembled audiobook.
    pub start_sample: usize,
    /// Silence inserted before this segment (0 for the first).
    pub gap_before_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Stopped { after_stage: String },
    Failed { stage: String, message: String },
}

/// Provenance record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudiobookManifest {
    pub story_id: String,
    pub status: RunStatus,
    pub sample_rate: u32,
    pub personas: Vec<PersonaRef>,
    pub lines: Vec<ScriptLine>,
    pub segments: Vec<SegmentRef>,
    pub total_samples: usize,
    pub total_duration_s: f64,
    pub audiobook: Option<FileRef>,
    pub config_fingerprint: String,
    pub backend_ids: BTreeMap<String, String>,
    pub fallbacks: FallbackCounters,
    pub context_windowing: ContextWindowing,
}

impl AudiobookManifest {
    pub fn empty(story_id: &str, config_fingerprint: &str) -> Self {
        AudiobookManifest {
            story_id: story_id.to_string(),
            status: RunStatus::Complete,
            sample_rate: crate::audio::SAMPLE_RATE,
            personas: Vec::new(),
            lines: Vec::new(),
            segments: Vec::new(),
            total_samples: 0,
            total_duration_s: 0.0,
            audiobook: None,
            config_fingerprint: config_fingerprint.to_string(),
            backend_ids: BTreeMap::new(),
            fallbacks: FallbackCounters::default(),
            context_windowing: ContextWindowing::default(),
        }
    }

    /// Verifies the structural invariants of a complete manifest: one segment
    /// per line in sentence order, contiguous placement, totals equal to
    /// segment lengths plus gaps, and every line's speaker listed.
    pub fn check_consistency(&self) -> Result<(), ManifestError> {
        let bad = |m: String| Err(ManifestError::Inconsistent(m));
        if self.segments.len() != self.lines.len() {
            return bad(format!(
                "{} segments for {} lines",
                self.segments.len(),
                self.lines.len()
            ));
        }
        let ids: HashSet<&str> = self.personas.iter().map(|p| p.speaker_id.as_str()).collect();
        let mut cursor = 0usize;
        for (i, (seg, line)) in self.segments.iter().zip(&self.lines).enumerate() {
            if seg.sentence_index != line.sentence_index {
                return bad(format!("segment {i} is for sentence {}", seg.sentence_index));
            }
            if i > 0 && self.lines[i - 1].sentence_index >= line.sentence_index {
                return bad(format!("lines out of order at {i}"));
            }
            if !ids.contains(line.speaker_id.as_str()) {
                return bad(format!("speaker {} not among personas", line.speaker_id));
            }
            if i == 0 && seg.gap_before_samples != 0 {
                return bad("gap before the first segment".into());
            }
            cursor += seg.gap_before_samples;
            if seg.start_sample != cursor {
                return bad(format!("segment {i} starts at {} not {cursor}", seg.start_sample));
            }
            let expected = seg.num_samples as f64 / self.sample_rate as f64;
            if seg.duration_s != expected {
                return bad(format!("segment {i} duration mismatch"));
            }
            cursor += seg.num_samples;
        }
        if cursor != self.total_samples {
            return bad(format!("total {} != {cursor}", self.total_samples));
        }
        if self.total_duration_s != self.total_samples as f64 / self.sample_rate as f64 {
            return bad("total duration mismatch".into());
        }
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }
}
