//! Deterministic offline backends.
//!
//! * [`ScriptedLlm`] / [`ScriptedJudge`] answer from a fixture table keyed by
//!   request tag. Repeated calls with the same key walk through the key's
//!   response list (the last entry repeats).
//! * [`MockImage`] draws a procedural portrait from a hash of (caption, seed)
//!   and marks it with a `engine-mock-face` PNG text chunk.
//! * [`SyntheticVoiceTts`] renders a three-harmonic tone complex whose base F0
//!   is derived from the persona inputs and whose vibrato follows keywords in
//!   the reading instruction.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde_json::Value;

use super::{
    BackendError, BackendIdentity, BackendKind, ImageBackend, ImageRequest, ImageResponse,
    JudgeBackend, JudgeRequest, LlmBackend, LlmRequest, LlmResponse, Stage, TtsBackend, TtsMode,
    TtsRequest, TtsResponse,
};
use crate::audio::{quantize, AudioBuffer, SAMPLE_RATE};
use crate::hash::{sha256_hex, sha256_parts};

/// PNG text-chunk key carried by mock images.
pub const MOCK_FACE_MARKER: &str = "engine-mock-face";

/// Fixture table shared by the scripted LLM and judge.
#[derive(Debug, Default)]
pub struct ScriptTable {
    responses: HashMap<String, Vec<String>>,
    calls: Mutex<HashMap<String, usize>>,
    digest: String,
}

impl ScriptTable {
    pub fn new(responses: HashMap<String, Vec<String>>) -> Self {
        let mut keys: Vec<_> = responses.iter().collect();
        keys.sort();
        let digest = sha256_hex(serde_json::to_string(&keys).unwrap_or_default().as_bytes());
        ScriptTable {
            responses,
            calls: Mutex::new(HashMap::new()),
            digest,
        }
    }

    /// Parses a JSON object mapping keys to a string, a list of strings, or
    /// any other JSON value (served as its compact serialization).
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| BackendError::InvalidRequest(format!("fixture file: {e}")))?;
        let Value::Object(map) = value else {
            return Err(BackendError::InvalidRequest(
                "fixture file must be a JSON object".into(),
            ));
        };
        let as_text = |v: &Value| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let responses = map
            .into_iter()
            .map(|(k, v)| {
                let list = match &v {
                    Value::Array(items) => items.iter().map(as_text).collect(),
                    other => vec![as_text(other)],
                };
                (k, list)
            })
            .collect();
        Ok(Self::new(responses))
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::InvalidRequest(format!("fixture file {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    /// Exact key first, then the key with its second segment replaced by `*`
    /// (`attribute_speaker/demo/3` → `attribute_speaker/*/3`).
    fn resolve(&self, tag: &str) -> Option<(&str, &Vec<String>)> {
        if let Some((k, v)) = self.responses.get_key_value(tag) {
            return Some((k.as_str(), v));
        }
        let mut parts: Vec<&str> = tag.split('/').collect();
        if parts.len() >= 2 {
            parts[1] = "*";
            let wildcard = parts.join("/");
            if let Some((k, v)) = self.responses.get_key_value(&wildcard) {
                return Some((k.as_str(), v));
            }
        }
        None
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.resolve(tag).is_some()
    }

    pub fn next(&self, tag: &str) -> Result<String, BackendError> {
        let (key, list) = self
            .resolve(tag)
            .ok_or_else(|| BackendError::NoScriptedResponse(tag.to_string()))?;
        if list.is_empty() {
            return Err(BackendError::NoScriptedResponse(tag.to_string()));
        }
        let mut calls = self.calls.lock().expect("script table lock");
        let n = calls.entry(key.to_string()).or_insert(0);
        let idx = (*n).min(list.len() - 1);
        *n += 1;
        Ok(list[idx].clone())
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

pub struct ScriptedLlm {
    table: ScriptTable,
}

impl ScriptedLlm {
    pub fn new(table: ScriptTable) -> Self {
        ScriptedLlm { table }
    }
}

impl LlmBackend for ScriptedLlm {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            stage: Stage::Llm,
            kind: BackendKind::Mock,
            name: "scripted-llm".into(),
            version: self.table.digest()[..12].to_string(),
        }
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, BackendError> {
        req.validate()?;
        let text = self.table.next(&req.tag)?;
        if text.is_empty() {
            return Err(BackendError::Decode("scripted response is empty".into()));
        }
        Ok(LlmResponse {
            text,
            finish_reason: "stop".into(),
        })
    }
}

pub struct ScriptedJudge {
    table: ScriptTable,
}

impl ScriptedJudge {
    pub fn new(table: ScriptTable) -> Self {
        ScriptedJudge { table }
    }
}

impl JudgeBackend for ScriptedJudge {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            stage: Stage::MllmJudge,
            kind: BackendKind::Mock,
            name: "scripted-judge".into(),
            version: self.table.digest()[..12].to_string(),
        }
    }

    /// Looks up `tag` (`metric/chunk`), falling back to the bare metric name.
    fn ask(&self, req: &JudgeRequest) -> Result<String, BackendError> {
        if req.audio_wav.is_empty() {
            return Err(BackendError::InvalidRequest("no audio attached".into()));
        }
        if self.table.contains(&req.tag) {
            return self.table.next(&req.tag);
        }
        let metric = req.tag.split('/').next().unwrap_or(&req.tag);
        self.table.next(metric)
    }
}

/// Procedural portrait generator.
#[derive(Debug, Default)]
pub struct MockImage {
    /// Per-caption sequence of face/non-face outputs; empty means always a face.
    face_pattern: Vec<bool>,
    calls: Mutex<HashMap<String, usize>>,
}

impl MockImage {
    pub fn new() -> Self {
        Self::default()
    }

    /// The n-th request for a caption yields a face iff `pattern[n]` (the last
    /// entry repeats).
    pub fn with_face_pattern(pattern: Vec<bool>) -> Self {
        MockImage {
            face_pattern: pattern,
            calls: Mutex::new(HashMap::new()),
        }
    }

    fn next_is_face(&self, caption: &str) -> bool {
        if self.face_pattern.is_empty() {
            return true;
        }
        let mut calls = self.calls.lock().expect("mock image lock");
        let n = calls.entry(caption.to_string()).or_insert(0);
        let face = self.face_pattern[(*n).min(self.face_pattern.len() - 1)];
        *n += 1;
        face
    }
}

impl ImageBackend for MockImage {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            stage: Stage::Image,
            kind: BackendKind::Mock,
            name: "procedural-portrait".into(),
            version: "1".into(),
        }
    }

    fn generate(&self, req: &ImageRequest) -> Result<ImageResponse, BackendError> {
        req.validate()?;
        let face = self.next_is_face(&req.caption);
        let seed = sha256_parts(&[req.caption.as_bytes(), &req.seed.to_le_bytes()]);
        let rgb = if face {
            draw_portrait(&seed, req.width, req.height)
        } else {
            draw_landscape(&seed, req.width, req.height)
        };
        let bytes = encode_png(&rgb, req.width, req.height, Some(face))
            .map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(ImageResponse {
            bytes,
            format: "png".into(),
        })
    }
}

/// Encodes 8-bit RGB as PNG, optionally with the mock face marker.
pub fn encode_png(
    rgb: &[u8],
    width: u32,
    height: u32,
    face_marker: Option<bool>,
) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        if let Some(face) = face_marker {
            enc.add_text_chunk(MOCK_FACE_MARKER.to_string(), face.to_string())?;
        }
        let mut writer = enc.write_header()?;
        writer.write_image_data(rgb)?;
    }
    Ok(out)
}

/// Reads the mock face marker from PNG bytes, if present.
pub fn read_face_marker(bytes: &[u8]) -> Option<bool> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = decoder.read_info().ok()?;
    reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == MOCK_FACE_MARKER)
        .map(|t| t.text == "true")
}

fn palette(seed: &[u8; 32], i: usize) -> [f32; 3] {
    [
        seed[i % 32] as f32,
        seed[(i + 1) % 32] as f32,
        seed[(i + 2) % 32] as f32,
    ]
}

fn in_ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> bool {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

fn draw_portrait(seed: &[u8; 32], w: u32, h: u32) -> Vec<u8> {
    let (wf, hf) = (w as f32, h as f32);
    let bg = palette(seed, 0);
    let skin_tones = [
        [241.0, 194.0, 167.0],
        [224.0, 172.0, 105.0],
        [198.0, 134.0, 66.0],
        [141.0, 85.0, 36.0],
        [92.0, 51.0, 23.0],
    ];
    let skin: [f32; 3] = skin_tones[seed[3] as usize % skin_tones.len()];
    let hair = [
        seed[4] as f32 * 0.35,
        seed[5] as f32 * 0.3,
        seed[6] as f32 * 0.25,
    ];
    let shirt = palette(seed, 7);
    let face_rx = wf * (0.17 + seed[10] as f32 / 255.0 * 0.06);
    let face_ry = hf * (0.22 + seed[11] as f32 / 255.0 * 0.06);
    let (cx, cy) = (wf * 0.5, hf * 0.44);
    let eye_dx = face_rx * 0.42;
    let eye_y = cy - face_ry * 0.12;
    let eye_r = wf * 0.022;
    let mouth_y = cy + face_ry * 0.5;

    let mut px = Vec::with_capacity((w * h * 3) as usize);
    for yi in 0..h {
        for xi in 0..w {
            let (x, y) = (xi as f32 + 0.5, yi as f32 + 0.5);
            let shade = 0.85 + 0.15 * (y / hf);
            let mut c = [bg[0] * shade, bg[1] * shade, bg[2] * shade];
            if in_ellipse(x, y, cx, hf * 1.02, wf * 0.42, hf * 0.28) {
                c = shirt;
            }
            if in_ellipse(x, y, cx, cy - face_ry * 0.25, face_rx * 1.12, face_ry * 0.95) {
                c = hair;
            }
            if in_ellipse(x, y, cx, cy, face_rx, face_ry) {
                let light = 1.0 - 0.25 * ((x - cx) / face_rx).abs();
                c = [skin[0] * light, skin[1] * light, skin[2] * light];
                if in_ellipse(x, y, cx - eye_dx, eye_y, eye_r * 1.6, eye_r)
                    || in_ellipse(x, y, cx + eye_dx, eye_y, eye_r * 1.6, eye_r)
                {
                    c = [30.0, 25.0, 20.0];
                }
                if in_ellipse(x, y, cx, mouth_y, face_rx * 0.35, face_ry * 0.05) {
                    c = [150.0, 60.0, 60.0];
                }
                if in_ellipse(x, y, cx, cy + face_ry * 0.15, face_rx * 0.08, face_ry * 0.2) {
                    c = [skin[0] * 0.8, skin[1] * 0.8, skin[2] * 0.8];
                }
            }
            px.extend(c.iter().map(|v| v.clamp(0.0, 255.0) as u8));
        }
    }
    px
}

fn draw_landscape(seed: &[u8; 32], w: u32, h: u32) -> Vec<u8> {
    let sky = palette(seed, 12);
    let ground = palette(seed, 20);
    let horizon = h as f32 * (0.45 + seed[25] as f32 / 255.0 * 0.2);
    let (sx, sy, sr) = (w as f32 * 0.7, h as f32 * 0.2, w as f32 * 0.08);
    let mut px = Vec::with_capacity((w * h * 3) as usize);
    for yi in 0..h {
        for xi in 0..w {
            let (x, y) = (xi as f32, yi as f32);
            let c = if in_ellipse(x, y, sx, sy, sr, sr) {
                [250.0, 230.0, 120.0]
            } else if y < horizon {
                let t = y / horizon;
                [sky[0] * (1.0 - 0.3 * t), sky[1], sky[2] * (0.7 + 0.3 * t)]
            } else {
                ground
            };
            px.extend(c.iter().map(|v| *v as u8));
        }
    }
    px
}

/// Vibrato applied by the synthetic voice for a reading instruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vibrato {
    /// Peak deviation as a fraction of base F0.
    pub depth: f64,
    pub rate_hz: f64,
}

/// Keyword groups checked in order; the first group with a matching word wins.
const VIBRATO_TABLE: &[(&[&str], f64, f64)] = &[
    (
        &[
            "excited", "excitedly", "excitement", "exclaim", "exclaiming", "thrilled", "joyful",
            "joy", "ecstatic", "shout", "shouting", "yell", "yelling", "laugh", "laughing",
            "frantic", "panicked", "angry", "furious", "triumphant", "exuberant",
        ],
        0.20,
        3.0,
    ),
    (
        &[
            "urgent", "tense", "anxious", "fearful", "frightened", "nervous", "surprised",
            "astonished", "alarmed", "indignant",
        ],
        0.12,
        2.5,
    ),
    (
        &[
            "sad", "sorrowful", "melancholy", "tearful", "wistful", "tender", "gentle", "warm",
            "whisper", "whispering", "hushed",
        ],
        0.06,
        1.5,
    ),
    (
        &[
            "calm", "flat", "monotone", "neutral", "steady", "measured", "reassuring", "soothing",
            "quiet", "even",
        ],
        0.02,
        1.0,
    ),
];

const DEFAULT_VIBRATO: Vibrato = Vibrato {
    depth: 0.05,
    rate_hz: 1.5,
};

pub fn vibrato_for(instruction: &str) -> Vibrato {
    let lower = instruction.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    for (keywords, depth, rate_hz) in VIBRATO_TABLE {
        if words.iter().any(|w| keywords.contains(w)) {
            return Vibrato {
                depth: *depth,
                rate_hz: *rate_hz,
            };
        }
    }
    DEFAULT_VIBRATO
}

/// Base F0 range of the synthetic voice, Hz.
pub const SYNTH_F0_MIN: f64 = 85.0;
pub const SYNTH_F0_MAX: f64 = 255.0;
/// Synthetic speaking rate: seconds of audio per input character.
pub const SYNTH_SECONDS_PER_CHAR: f64 = 0.06;
pub const SYNTH_MIN_SECONDS: f64 = 0.5;
pub const SYNTH_BOOTSTRAP_SECONDS: f64 = 3.0;

/// Voice parameters derived from the persona inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceProfile {
    pub base_f0: f64,
    pub harmonic2: f64,
    pub harmonic3: f64,
}

impl VoiceProfile {
    /// Hash of (face caption, face image) mapped into the voice parameter space.
    pub fn for_persona(face_image: &[u8], face_caption: &str) -> Self {
        let h = sha256_parts(&[face_caption.as_bytes(), face_image]);
        let word = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
        let unit = word as f64 / u64::MAX as f64;
        VoiceProfile {
            base_f0: SYNTH_F0_MIN + (SYNTH_F0_MAX - SYNTH_F0_MIN) * unit,
            harmonic2: 0.3 + 0.6 * h[8] as f64 / 255.0,
            harmonic3: 0.1 + 0.5 * h[9] as f64 / 255.0,
        }
    }
}

/// Number of samples the synthetic voice produces for a request.
pub fn synthetic_length(req: &TtsRequest) -> usize {
    let seconds = match req.mode {
        TtsMode::PersonaBootstrap => SYNTH_BOOTSTRAP_SECONDS,
        TtsMode::SentenceSynthesis => {
            (req.text.chars().count() as f64 * SYNTH_SECONDS_PER_CHAR).max(SYNTH_MIN_SECONDS)
        }
    };
    (seconds * SAMPLE_RATE as f64).round() as usize
}

#[derive(Debug, Default)]
pub struct SyntheticVoiceTts;

impl SyntheticVoiceTts {
    pub fn new() -> Self {
        SyntheticVoiceTts
    }
}

impl TtsBackend for SyntheticVoiceTts {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            stage: Stage::Tts,
            kind: BackendKind::Mock,
            name: "synthetic-voice".into(),
            version: "1".into(),
        }
    }

    fn synthesize(&self, req: &TtsRequest) -> Result<TtsResponse, BackendError> {
        req.validate()?;
        let profile = VoiceProfile::for_persona(&req.face_image, &req.face_caption);
        let vibrato = match req.mode {
            TtsMode::PersonaBootstrap => Vibrato {
                depth: 0.0,
                rate_hz: 0.0,
            },
            TtsMode::SentenceSynthesis => vibrato_for(&req.instruction),
        };
        let n = synthetic_length(req);
        let envelope = word_envelope(&req.text, n);
        let norm = 0.6 / (1.0 + profile.harmonic2 + profile.harmonic3);
        let sr = SAMPLE_RATE as f64;
        let two_pi = std::f64::consts::TAU;
        let mut phase = 0.0f64;
        let samples: Vec<i16> = envelope
            .iter()
            .enumerate()
            .map(|(i, &env)| {
                let t = i as f64 / sr;
                let f0 = profile.base_f0 * (1.0 + vibrato.depth * (two_pi * vibrato.rate_hz * t).sin());
                let value = env
                    * norm
                    * (phase.sin()
                        + profile.harmonic2 * (2.0 * phase).sin()
                        + profile.harmonic3 * (3.0 * phase).sin());
                phase = (phase + two_pi * f0 / sr) % (two_pi * 3.0);
                quantize(value as f32)
            })
            .collect();
        Ok(TtsResponse {
            audio: AudioBuffer::new(samples),
        })
    }
}

/// Per-word amplitude envelope: each character owns an equal slot of the
/// output; whitespace slots are silent and each word gets short raised-cosine
/// ramps at its edges.
fn word_envelope(text: &str, n: usize) -> Vec<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut env = vec![0.0; n];
    if chars.is_empty() || n == 0 {
        return env;
    }
    let slot = |i: usize| i * n / chars.len();
    let ramp_max = (0.015 * SAMPLE_RATE as f64) as usize;
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start_char = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let (a, b) = (slot(start_char), slot(i));
        let len = b - a;
        let ramp = ramp_max.min(len / 4).max(1);
        for (k, e) in env[a..b].iter_mut().enumerate() {
            let edge = k.min(len - 1 - k);
            *e = if edge >= ramp {
                1.0
            } else {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
            };
        }
    }
    env
}
