//! Story ingestion and the data model shared by every pipeline stage.

mod model;
mod segment;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use model::{
    validate_persona_set, AudiobookManifest, ContextWindowing, FallbackCounters, FileRef,
    ManifestError, PersonaInputHashes, PersonaRef, RunStatus, ScriptLine, SegmentRef,
    SpeakerPersona, VOICE_SAMPLE_MAX_S, VOICE_SAMPLE_MIN_S,
};
pub use segment::{is_abbreviation, segment_sentences};

use crate::hash::sha256_hex;

#[derive(Debug, Error)]
pub enum StoryError {
    #[error("cannot read story {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("story {0} is not valid UTF-8")]
    InvalidEncoding(String),
    #[error("empty story")]
    Empty,
}

/// One sentence of a story. `text` is always `raw_text[span.0..span.1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub id: String,
    pub title: String,
    pub raw_text: String,
    pub sentences: Vec<Sentence>,
}

impl Story {
    /// Segments `raw_text` and builds a story. When `id` is `None` the id is
    /// derived from the NFC-normalized text.
    pub fn from_text(
        id: Option<&str>,
        title: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Result<Self, StoryError> {
        let raw_text = raw_text.into();
        if raw_text.trim().is_empty() {
            return Err(StoryError::Empty);
        }
        let sentences = segment_sentences(&raw_text);
        let id = id
            .map(str::to_string)
            .unwrap_or_else(|| content_id(&raw_text));
        Ok(Story {
            id,
            title: title.into(),
            raw_text,
            sentences,
        })
    }

    /// NFC form of a sentence, used wherever text leaves the engine (prompts, TTS).
    pub fn normalized(text: &str) -> String {
        text.nfc().collect()
    }

    pub fn sentence(&self, index: usize) -> Option<&Sentence> {
        self.sentences.get(index)
    }
}

/// Content-derived story id: `story-` plus 16 hex digits of the SHA-256 of the
/// NFC-normalized text.
pub fn content_id(raw_text: &str) -> String {
    let normalized: String = raw_text.nfc().collect();
    format!("story-{}", &sha256_hex(normalized.as_bytes())[..16])
}

/// Reads a UTF-8 story file. The title is the file stem.
pub fn load_story(path: &Path, id: Option<&str>) -> Result<Story, StoryError> {
    let bytes = std::fs::read(path).map_err(|source| StoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw_text = String::from_utf8(bytes)
        .map_err(|_| StoryError::InvalidEncoding(path.display().to_string()))?;
    let title = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Story::from_text(id, title, raw_text)
}
