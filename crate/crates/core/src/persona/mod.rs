//! Speaker personas: cast extraction, face generation with a human-face
//! filter, and bootstrap voice samples.

mod face;
mod store;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::backends::{
    complete_json, BackendError, ImageBackend, ImageRequest, LlmBackend, LlmRequest,
    ResponseFormat, TtsBackend, TtsMode, TtsRequest,
};
use crate::hash::sha256_parts;
use crate::prompts;
use crate::story::{SpeakerPersona, Story, VOICE_SAMPLE_MAX_S, VOICE_SAMPLE_MIN_S};

pub use face::{detect_faces, face_filter, group_rectangles, DetectorParams, Rect};
pub use store::{load_personas, read_persona, write_persona, StoredPersona};

pub const NARRATOR_ID: &str = "narrator";
pub const MAX_PERSONAS: usize = 12;
pub const FACE_CAPTION_PREFIX: &str = "portrait photo of ";

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("speaker extraction failed: {0}")]
    Extraction(BackendError),
    #[error("no face obtained for {speaker_id} after {} attempts", attempts.len())]
    NoFace {
        speaker_id: String,
        attempts: Vec<FaceAttempt>,
    },
    #[error("voice bootstrap failed for {speaker_id}: {reason}")]
    Voice { speaker_id: String, reason: String },
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("persona store: {0}")]
    Store(String),
}

/// A speaker before face and voice exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaDraft {
    pub speaker_id: String,
    pub name_or_role: String,
    pub caption: String,
    pub is_narrator: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceAttempt {
    pub attempt: u32,
    pub seed: u64,
    pub outcome: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonaConfig {
    pub max_attempts: u32,
    pub image_size: u32,
    pub caption_temperature: f32,
    pub extraction_attempts: u32,
    pub seed: u64,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        PersonaConfig {
            max_attempts: 4,
            image_size: 512,
            caption_temperature: 0.7,
            extraction_attempts: 3,
            seed: 0,
        }
    }
}

pub fn cast_schema() -> Value {
    let person = json!({
        "type": "object",
        "required": ["name", "caption"],
        "properties": {
            "name": {"type": "string", "minLength": 1},
            "caption": {"type": "string", "minLength": 1},
        },
    });
    json!({
        "type": "object",
        "required": ["narrator", "characters"],
        "properties": {
            "narrator": person,
            "characters": {"type": "array", "items": person},
        },
    })
}

pub fn extraction_request(story: &Story, temperature: f32) -> LlmRequest {
    LlmRequest {
        tag: format!("extract_speakers/{}/0", story.id),
        system: prompts::EXTRACT_SPEAKERS_SYSTEM.trim_end().to_string(),
        user: prompts::fill(
            prompts::EXTRACT_SPEAKERS_USER.trim_end(),
            &[("story", Story::normalized(&story.raw_text).as_str())],
        ),
        temperature,
        response_format: ResponseFormat::JsonSchema {
            name: "cast".into(),
            schema: cast_schema(),
        },
    }
}

/// Lowercase ASCII slug; runs of other characters become one hyphen.
pub fn slugify(name: &str) -> String {
    let mut slug = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.is_empty() && !slug.ends_with('-') {
            slug.push('-');
        }
    }
    let slug = slug.trim_end_matches('-').to_string();
    if slug.is_empty() {
        "speaker".into()
    } else {
        slug
    }
}

fn unique_id(base: String, taken: &HashSet<String>) -> String {
    if !taken.contains(&base) {
        return base;
    }
    (2..)
        .map(|k| format!("{base}-{k}"))
        .find(|id| !taken.contains(id))
        .expect("unbounded suffixes")
}

/// Turns a validated cast document into drafts: narrator first, duplicates
/// and narrator repeats dropped, capped at [`MAX_PERSONAS`].
pub fn drafts_from_cast(cast: &Value) -> Vec<PersonaDraft> {
    let field = |v: &Value, k: &str| v[k].as_str().unwrap_or_default().trim().to_string();
    let narrator = &cast["narrator"];
    let mut drafts = vec![PersonaDraft {
        speaker_id: NARRATOR_ID.into(),
        name_or_role: field(narrator, "name"),
        caption: field(narrator, "caption"),
        is_narrator: true,
    }];
    let mut names: HashSet<String> = HashSet::from([drafts[0].name_or_role.to_lowercase()]);
    let mut ids: HashSet<String> = HashSet::from([NARRATOR_ID.to_string()]);
    let characters = cast["characters"].as_array().cloned().unwrap_or_default();
    for c in &characters {
        let name = field(c, "name");
        if !names.insert(name.to_lowercase()) {
            continue;
        }
        if drafts.len() == MAX_PERSONAS {
            tracing::warn!(cap = MAX_PERSONAS, dropped = %name, "speaker cap reached, truncating cast");
            continue;
        }
        let id = unique_id(slugify(&name), &ids);
        ids.insert(id.clone());
        drafts.push(PersonaDraft {
            speaker_id: id,
            name_or_role: name,
            caption: field(c, "caption"),
            is_narrator: false,
        });
    }
    drafts
}

pub fn extract_speakers(
    story: &Story,
    llm: &dyn LlmBackend,
    config: &PersonaConfig,
) -> Result<Vec<PersonaDraft>, PersonaError> {
    let req = extraction_request(story, config.caption_temperature);
    let (cast, _) =
        complete_json(llm, &req, config.extraction_attempts).map_err(PersonaError::Extraction)?;
    Ok(drafts_from_cast(&cast))
}

pub fn face_caption_for(caption: &str) -> String {
    let caption = caption.trim().trim_end_matches('.');
    let mut chars = caption.chars();
    let lowered = match (chars.next(), chars.next()) {
        // "An old man" -> "an old man", but keep "NASA engineer".
        (Some(first), Some(second)) if first.is_uppercase() && !second.is_uppercase() => {
            first.to_lowercase().chain(caption.chars().skip(1)).collect()
        }
        _ => caption.to_string(),
    };
    format!("{FACE_CAPTION_PREFIX}{lowered}")
}

/// Seed for one face attempt; 32-bit so any image backend accepts it.
pub fn face_seed(run_seed: u64, speaker_id: &str, attempt: u32) -> u64 {
    let h = sha256_parts(&[
        b"face",
        &run_seed.to_le_bytes(),
        speaker_id.as_bytes(),
        &attempt.to_le_bytes(),
    ]);
    u32::from_le_bytes(h[..4].try_into().expect("4 bytes")) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacePersona {
    pub face_image: Vec<u8>,
    pub face_format: String,
    pub face_caption: String,
    pub attempts: Vec<FaceAttempt>,
}

pub fn generate_face_persona(
    draft: &PersonaDraft,
    image: &dyn ImageBackend,
    config: &PersonaConfig,
) -> Result<FacePersona, PersonaError> {
    let face_caption = face_caption_for(&draft.caption);
    let mut attempts = Vec::new();
    for attempt in 1..=config.max_attempts.max(1) {
        let seed = face_seed(config.seed, &draft.speaker_id, attempt);
        let req = ImageRequest {
            caption: face_caption.clone(),
            seed,
            width: config.image_size,
            height: config.image_size,
        };
        let outcome = match image.generate(&req) {
            Ok(resp) if face_filter(&resp.bytes) => {
                attempts.push(FaceAttempt {
                    attempt,
                    seed,
                    outcome: "accepted".into(),
                });
                return Ok(FacePersona {
                    face_image: resp.bytes,
                    face_format: resp.format,
                    face_caption,
                    attempts,
                });
            }
            Ok(_) => "no face detected".to_string(),
            Err(e @ (BackendError::ContentRejected(_) | BackendError::Decode(_))) => e.to_string(),
            Err(e) => return Err(e.into()),
        };
        tracing::info!(speaker = %draft.speaker_id, attempt, %outcome, "face attempt rejected");
        attempts.push(FaceAttempt {
            attempt,
            seed,
            outcome,
        });
    }
    Err(PersonaError::NoFace {
        speaker_id: draft.speaker_id.clone(),
        attempts,
    })
}

/// Voice from face and caption alone (masked voice input).
pub fn bootstrap_audio_persona(
    speaker_id: &str,
    face_image: &[u8],
    face_caption: &str,
    text: &str,
    tts: &dyn TtsBackend,
) -> Result<AudioBuffer, PersonaError> {
    let req = TtsRequest {
        text: text.to_string(),
        instruction: String::new(),
        face_image: face_image.to_vec(),
        face_caption: face_caption.to_string(),
        voice_sample: AudioBuffer::default(),
        mode: TtsMode::PersonaBootstrap,
    };
    let audio = tts.synthesize(&req)?.audio;
    let d = audio.duration_s();
    if !(VOICE_SAMPLE_MIN_S..=VOICE_SAMPLE_MAX_S).contains(&d) {
        return Err(PersonaError::Voice {
            speaker_id: speaker_id.to_string(),
            reason: format!("sample lasts {d:.3} s"),
        });
    }
    Ok(audio)
}

/// Text spoken for the bootstrap sample.
pub const BOOTSTRAP_TEXT: &str = "Hello. This is how my voice sounds when I tell a story.";

pub fn build_persona(
    draft: &PersonaDraft,
    image: &dyn ImageBackend,
    tts: &dyn TtsBackend,
    config: &PersonaConfig,
) -> Result<(SpeakerPersona, Vec<FaceAttempt>), PersonaError> {
    let face = generate_face_persona(draft, image, config)?;
    let voice = bootstrap_audio_persona(
        &draft.speaker_id,
        &face.face_image,
        &face.face_caption,
        BOOTSTRAP_TEXT,
        tts,
    )?;
    let persona = SpeakerPersona {
        speaker_id: draft.speaker_id.clone(),
        name_or_role: draft.name_or_role.clone(),
        caption: draft.caption.clone(),
        face_image: face.face_image,
        face_format: face.face_format,
        face_caption: face.face_caption,
        voice_sample: voice,
        is_narrator: draft.is_narrator,
    };
    Ok((persona, face.attempts))
}

/// Builds every draft's persona, in parallel, preserving draft order.
pub fn build_personas(
    drafts: &[PersonaDraft],
    image: &dyn ImageBackend,
    tts: &dyn TtsBackend,
    config: &PersonaConfig,
) -> Result<Vec<SpeakerPersona>, PersonaError> {
    drafts
        .par_iter()
        .map(|d| build_persona(d, image, tts, config).map(|(p, _)| p))
        .collect()
}
