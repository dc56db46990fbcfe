//! Contract checks any backend implementation must pass.
//!
//! The same checks run against the mocks, against the in-process HTTP stub
//! used by the test suite, and (opt-in) against a live model adapter.

use std::collections::HashMap;

use serde_json::json;

use super::{
    complete_json, BackendError, ImageBackend, ImageRequest, JudgeBackend, JudgeRequest,
    LlmBackend, LlmRequest, ResponseFormat, ScriptTable, TtsBackend, TtsMode, TtsRequest,
};
use crate::audio::{AudioBuffer, SAMPLE_RATE};

pub const FREE_TAG: &str = "conformance/free/0";
pub const JSON_TAG: &str = "conformance/json/0";
pub const JUDGE_TAG: &str = "conformance";

/// Script table answering the conformance LLM and judge requests.
pub fn script_table() -> ScriptTable {
    ScriptTable::new(HashMap::from([
        (FREE_TAG.to_string(), vec!["The narrator.".to_string()]),
        (JSON_TAG.to_string(), vec![r#"{"ok": true}"#.to_string()]),
        (JUDGE_TAG.to_string(), vec!["4".to_string()]),
    ]))
}

fn fail(what: &str, detail: impl std::fmt::Display) -> String {
    format!("{what}: {detail}")
}

pub fn check_llm(llm: &dyn LlmBackend) -> Result<(), String> {
    let mut req = LlmRequest {
        tag: FREE_TAG.into(),
        system: "You answer briefly.".into(),
        user: "Who is speaking?".into(),
        temperature: 0.0,
        response_format: ResponseFormat::FreeText,
    };
    let resp = llm.complete(&req).map_err(|e| fail("free-text completion", e))?;
    if resp.text.trim().is_empty() {
        return Err(fail("free-text completion", "empty text"));
    }

    req.tag = JSON_TAG.into();
    req.user = "Reply with a JSON object with a boolean field ok.".into();
    let schema = json!({
        "type": "object",
        "required": ["ok"],
        "properties": {"ok": {"type": "boolean"}},
    });
    req.response_format = ResponseFormat::JsonSchema {
        name: "ok".into(),
        schema,
    };
    complete_json(llm, &req, 2).map_err(|e| fail("schema completion", e))?;

    req.user = String::new();
    match llm.complete(&req) {
        Err(BackendError::InvalidRequest(_)) => Ok(()),
        other => Err(fail("empty prompt", format!("expected rejection, got {other:?}"))),
    }
}

/// `deterministic`: same seed must give identical bytes.
pub fn check_image(image: &dyn ImageBackend, deterministic: bool) -> Result<(), String> {
    let req = ImageRequest {
        caption: "portrait photo of an old sailor with a grey beard".into(),
        seed: 7,
        width: 512,
        height: 512,
    };
    let a = image.generate(&req).map_err(|e| fail("image generation", e))?;
    if a.format != "png" || image::guess_format(&a.bytes).ok() != Some(image::ImageFormat::Png) {
        return Err(fail("image generation", "output is not PNG"));
    }
    let decoded = image::load_from_memory(&a.bytes).map_err(|e| fail("image decode", e))?;
    if (decoded.width(), decoded.height()) != (512, 512) {
        return Err(fail("image generation", "wrong dimensions"));
    }
    if deterministic {
        let b = image.generate(&req).map_err(|e| fail("image generation", e))?;
        if a.bytes != b.bytes {
            return Err(fail("image generation", "same seed gave different bytes"));
        }
    }
    let bad = ImageRequest {
        width: 500,
        height: 500,
        ..req
    };
    match image.generate(&bad) {
        Err(BackendError::InvalidRequest(_)) => Ok(()),
        other => Err(fail("unsupported size", format!("expected rejection, got {:?}", other.map(|r| r.format)))),
    }
}

pub fn check_tts(tts: &dyn TtsBackend, face_png: &[u8]) -> Result<(), String> {
    let mut req = TtsRequest {
        text: "The lighthouse keeper climbed the stairs once more.".into(),
        instruction: String::new(),
        face_image: face_png.to_vec(),
        face_caption: "portrait photo of an old sailor with a grey beard".into(),
        voice_sample: AudioBuffer::default(),
        mode: TtsMode::PersonaBootstrap,
    };
    let boot = tts.synthesize(&req).map_err(|e| fail("bootstrap synthesis", e))?;
    boot.validate().map_err(|e| fail("bootstrap output", e))?;
    if boot.audio.sample_rate != SAMPLE_RATE {
        return Err(fail("bootstrap output", "not canonical rate"));
    }

    req.mode = TtsMode::SentenceSynthesis;
    req.instruction = "Speak slowly, in a tired and gentle voice.".into();
    req.voice_sample = boot.audio;
    let line = tts.synthesize(&req).map_err(|e| fail("sentence synthesis", e))?;
    line.validate().map_err(|e| fail("sentence output", e))?;

    req.voice_sample = AudioBuffer::default();
    match tts.synthesize(&req) {
        Err(BackendError::InvalidRequest(_)) => Ok(()),
        other => Err(fail("missing voice sample", format!("expected rejection, got {:?}", other.map(|r| r.audio.len())))),
    }
}

pub fn check_judge(judge: &dyn JudgeBackend, audio: &AudioBuffer) -> Result<(), String> {
    let req = JudgeRequest {
        tag: JUDGE_TAG.into(),
        question: "Rate the audio quality from 1 to 5. Answer with a number.".into(),
        audio_wav: audio.to_wav_bytes(),
    };
    let answer = judge.ask(&req).map_err(|e| fail("judge", e))?;
    if answer.trim().is_empty() {
        return Err(fail("judge", "empty answer"));
    }
    Ok(())
}
