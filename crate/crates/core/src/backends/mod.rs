//! Model-backend contracts (LLM chat, image generation, multimodal TTS, audio
//! judge), their HTTP clients, and deterministic mock implementations.
//!
//! Every backend is a shareable `Send + Sync` handle. HTTP clients bound the
//! number of in-flight requests and retry transient failures; mocks are pure
//! functions of the request (plus, for scripted mocks, a per-key call count).

pub mod cassette;
pub mod conformance;
pub mod http;
pub mod mock;
pub mod schema;

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::hash::sha256_hex;

pub use cassette::{CassetteLlm, CassetteMode};
pub use http::{HttpImage, HttpJudge, HttpLlm, HttpTts};
pub use mock::{MockImage, ScriptTable, ScriptedJudge, ScriptedLlm, SyntheticVoiceTts};
pub use schema::complete_json;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response for key {0}")]
    NoScriptedResponse(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("content rejected by backend: {0}")]
    ContentRejected(String),
    #[error("cannot decode backend output: {0}")]
    Decode(String),
    #[error("backend returned empty audio")]
    EmptyAudio,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Llm,
    Image,
    Tts,
    MllmJudge,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Llm => "llm",
            Stage::Image => "image",
            Stage::Tts => "tts",
            Stage::MllmJudge => "mllm_judge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Who answered a stage's requests. Recorded verbatim in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub stage: Stage,
    pub kind: BackendKind,
    /// Endpoint URL for HTTP backends, mock name otherwise.
    pub name: String,
    pub version: String,
}

impl fmt::Display for BackendIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
        };
        write!(f, "{kind}:{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseFormat {
    FreeText,
    JsonSchema { name: String, schema: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    /// Call-site key (`stage/story/index`). Used by scripted mocks and logs;
    /// never sent over the wire.
    pub tag: String,
    pub system: String,
    pub user: String,
    pub temperature: f32,
    pub response_format: ResponseFormat,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.system.trim().is_empty() || self.user.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hash of everything that goes on the wire (the tag is excluded).
    pub fn wire_hash(&self) -> String {
        let canonical = serde_json::json!({
            "system": self.system,
            "user": self.user,
            "temperature": self.temperature,
            "response_format": self.response_format,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_reason: String,
}

/// Square sizes accepted by image backends.
pub const IMAGE_SIZES: [u32; 2] = [512, 768];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub caption: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl ImageRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.caption.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty caption".into()));
        }
        if self.width != self.height || !IMAGE_SIZES.contains(&self.width) {
            return Err(BackendError::InvalidRequest(format!(
                "unsupported size {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageResponse {
    pub bytes: Vec<u8>,
    pub format: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtsMode {
    /// Voice from face and caption only; the voice-sample input is masked.
    PersonaBootstrap,
    SentenceSynthesis,
}

impl TtsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TtsMode::PersonaBootstrap => "persona_bootstrap",
            TtsMode::SentenceSynthesis => "sentence_synthesis",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtsRequest {
    pub text: String,
    pub instruction: String,
    pub face_image: Vec<u8>,
    pub face_caption: String,
    pub voice_sample: AudioBuffer,
    pub mode: TtsMode,
}

impl TtsRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let missing = |what: &str| BackendError::InvalidRequest(format!("missing {what}"));
        if self.text.trim().is_empty() {
            return Err(missing("target text"));
        }
        if self.face_image.is_empty() {
            return Err(missing("face image"));
        }
        if self.face_caption.trim().is_empty() {
            return Err(missing("face caption"));
        }
        if self.mode == TtsMode::SentenceSynthesis {
            if self.voice_sample.is_empty() {
                return Err(missing("voice sample"));
            }
            if self.instruction.trim().is_empty() {
                return Err(missing("instruction"));
            }
        }
        Ok(())
    }
}

/// Shortest and longest acceptable synthesized audio, in seconds.
pub const TTS_MIN_S: f64 = 0.2;
pub const TTS_MAX_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TtsResponse {
    pub audio: AudioBuffer,
}

impl TtsResponse {
    /// Enforces the output contract: canonical format, non-empty, bounded length.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.audio.is_empty() {
            return Err(BackendError::EmptyAudio);
        }
        if self.audio.sample_rate != SAMPLE_RATE {
            return Err(BackendError::Decode(format!(
                "sample rate {} (expected {SAMPLE_RATE})",
                self.audio.sample_rate
            )));
        }
        let d = self.audio.duration_s();
        if !(TTS_MIN_S..=TTS_MAX_S).contains(&d) {
            return Err(BackendError::Decode(format!("audio lasts {d:.3} s")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeRequest {
    /// Scripted-mock key, e.g. `MOS-E/0` for the first chunk.
    pub tag: String,
    pub question: String,
    pub audio_wav: Vec<u8>,
}

pub trait LlmBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, BackendError>;
}

pub trait ImageBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    fn generate(&self, req: &ImageRequest) -> Result<ImageResponse, BackendError>;
}

pub trait TtsBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    fn synthesize(&self, req: &TtsRequest) -> Result<TtsResponse, BackendError>;
}

/// An audio-understanding model answering a question about a recording.
pub trait JudgeBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    fn ask(&self, req: &JudgeRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    /// Three retries after 0.5, 1 and 2 seconds.
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << retry.min(16)))
    }
}

/// Runs `op`, retrying retryable errors with exponential backoff.
pub fn with_retry<T>(
    policy: RetryPolicy,
    mut op: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut retry = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && retry < policy.max_retries => {
                tracing::warn!(error = %e, retry, "backend call failed, backing off");
                std::thread::sleep(policy.delay(retry));
                retry += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Counting semaphore bounding concurrent requests to one backend.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        InFlightLimit {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        InFlightGuard { limit: self }
    }

    pub fn in_use(&self) -> usize {
        *self.used.lock().expect("in-flight lock")
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut used = self.limit.used.lock().expect("in-flight lock");
        *used -= 1;
        self.limit.freed.notify_one();
    }
}
