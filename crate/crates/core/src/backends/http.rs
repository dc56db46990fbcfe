//! HTTP clients for the four backend stages.
//!
//! * LLM: `POST {base}/v1/chat/completions` (chat-completions JSON).
//! * Image: `POST {base}/v1/images/generations`, base64 image in the reply.
//! * TTS: `POST {base}/synthesize`, multipart parts `text`, `instruction`,
//!   `face_caption`, `mode`, `face_image` (PNG) and `voice_sample` (WAV); WAV reply.
//! * Judge: chat completions with an `input_audio` content part.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use reqwest::blocking::{multipart, Client, RequestBuilder, Response};
use serde_json::{json, Value};

use super::{
    with_retry, BackendError, BackendIdentity, BackendKind, ImageBackend, ImageRequest,
    ImageResponse, InFlightLimit, JudgeBackend, JudgeRequest, LlmBackend, LlmRequest, LlmResponse,
    ResponseFormat, RetryPolicy, Stage, TtsBackend, TtsRequest, TtsResponse,
};
use crate::audio::AudioBuffer;

/// Connection settings shared by all HTTP clients.
#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub base_url: String,
    pub model: String,
    pub api_key: String,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

struct HttpCore {
    settings: HttpSettings,
    client: Client,
    limit: InFlightLimit,
}

impl HttpCore {
    fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpCore {
            limit: InFlightLimit::new(settings.max_in_flight),
            settings,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn identity(&self, stage: Stage, path: &str) -> BackendIdentity {
        BackendIdentity {
            stage,
            kind: BackendKind::Http,
            name: self.url(path),
            version: self.settings.model.clone(),
        }
    }

    /// Sends with retry; `build` is invoked once per attempt.
    fn send(&self, build: impl Fn(&Client) -> RequestBuilder) -> Result<Response, BackendError> {
        let _slot = self.limit.acquire();
        with_retry(self.settings.retry, || {
            let resp = build(&self.client)
                .bearer_auth(&self.settings.api_key)
                .send()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            if status == 429 {
                return Err(BackendError::RateLimited(resp.text().unwrap_or_default()));
            }
            if !(200..300).contains(&status) {
                let body = resp.text().unwrap_or_default();
                return Err(BackendError::Http { status, body });
            }
            Ok(resp)
        })
    }
}

fn read_json(resp: Response) -> Result<Value, BackendError> {
    resp.json::<Value>()
        .map_err(|e| BackendError::Decode(format!("response body: {e}")))
}

fn chat_text(body: &Value) -> Result<(String, String), BackendError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::Decode("no choices in response".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if text.trim().is_empty() {
        return Err(BackendError::Decode("empty completion".into()));
    }
    let finish = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown")
        .to_string();
    Ok((text, finish))
}

pub struct HttpLlm {
    core: HttpCore,
}

impl HttpLlm {
    pub const PATH: &'static str = "/v1/chat/completions";

    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        Ok(HttpLlm {
            core: HttpCore::new(settings)?,
        })
    }

    /// Request body for the chat-completions endpoint.
    pub fn body(&self, req: &LlmRequest) -> Value {
        let mut body = json!({
            "model": self.core.settings.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
        });
        if let ResponseFormat::JsonSchema { name, schema } = &req.response_format {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {"name": name, "schema": schema},
            });
        }
        body
    }
}

impl LlmBackend for HttpLlm {
    fn identity(&self) -> BackendIdentity {
        self.core.identity(Stage::Llm, Self::PATH)
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, BackendError> {
        req.validate()?;
        let url = self.core.url(Self::PATH);
        let body = self.body(req);
        let resp = self.core.send(|c| c.post(&url).json(&body))?;
        let (text, finish_reason) = chat_text(&read_json(resp)?)?;
        Ok(LlmResponse {
            text,
            finish_reason,
        })
    }
}

pub struct HttpImage {
    core: HttpCore,
}

impl HttpImage {
    pub const PATH: &'static str = "/v1/images/generations";

    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        Ok(HttpImage {
            core: HttpCore::new(settings)?,
        })
    }
}

impl ImageBackend for HttpImage {
    fn identity(&self) -> BackendIdentity {
        self.core.identity(Stage::Image, Self::PATH)
    }

    fn generate(&self, req: &ImageRequest) -> Result<ImageResponse, BackendError> {
        req.validate()?;
        let url = self.core.url(Self::PATH);
        let body = json!({
            "model": self.core.settings.model,
            "prompt": req.caption,
            "n": 1,
            "size": format!("{}x{}", req.width, req.height),
            "seed": req.seed,
            "response_format": "b64_json",
        });
        let resp = match self.core.send(|c| c.post(&url).json(&body)) {
            Err(BackendError::Http { status, body }) if status == 400 && body.contains("content_policy") => {
                return Err(BackendError::ContentRejected(body));
            }
            other => other?,
        };
        let value = read_json(resp)?;
        let b64 = value
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Decode("no data[0].b64_json".into()))?;
        let bytes = BASE64
            .decode(b64)
            .map_err(|e| BackendError::Decode(format!("base64: {e}")))?;
        normalize_image(bytes, req.width, req.height)
    }
}

/// Decodes, checks dimensions, and re-encodes non-PNG images as PNG.
pub fn normalize_image(bytes: Vec<u8>, width: u32, height: u32) -> Result<ImageResponse, BackendError> {
    let format = image::guess_format(&bytes).map_err(|e| BackendError::Decode(e.to_string()))?;
    let decoded =
        image::load_from_memory(&bytes).map_err(|e| BackendError::Decode(e.to_string()))?;
    if (decoded.width(), decoded.height()) != (width, height) {
        return Err(BackendError::Decode(format!(
            "image is {}x{}, requested {width}x{height}",
            decoded.width(),
            decoded.height()
        )));
    }
    if format == image::ImageFormat::Png {
        return Ok(ImageResponse {
            bytes,
            format: "png".into(),
        });
    }
    let rgb = decoded.to_rgb8();
    let png = super::mock::encode_png(rgb.as_raw(), width, height, None)
        .map_err(|e| BackendError::Decode(e.to_string()))?;
    Ok(ImageResponse {
        bytes: png,
        format: "png".into(),
    })
}

pub struct HttpTts {
    core: HttpCore,
}

impl HttpTts {
    pub const PATH: &'static str = "/synthesize";

    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        Ok(HttpTts {
            core: HttpCore::new(settings)?,
        })
    }

    fn form(req: &TtsRequest, voice_wav: &[u8]) -> Result<multipart::Form, BackendError> {
        let face = multipart::Part::bytes(req.face_image.clone())
            .file_name("face.png")
            .mime_str("image/png")
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let voice = multipart::Part::bytes(voice_wav.to_vec())
            .file_name("voice.wav")
            .mime_str("audio/wav")
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        Ok(multipart::Form::new()
            .text("text", req.text.clone())
            .text("instruction", req.instruction.clone())
            .text("face_caption", req.face_caption.clone())
            .text("mode", req.mode.as_str())
            .part("face_image", face)
            .part("voice_sample", voice))
    }
}

impl TtsBackend for HttpTts {
    fn identity(&self) -> BackendIdentity {
        self.core.identity(Stage::Tts, Self::PATH)
    }

    fn synthesize(&self, req: &TtsRequest) -> Result<TtsResponse, BackendError> {
        req.validate()?;
        let url = self.core.url(Self::PATH);
        // A masked voice sample is sent as an empty part.
        let voice_wav = if req.voice_sample.is_empty() {
            Vec::new()
        } else {
            req.voice_sample.to_wav_bytes()
        };
        let resp = self.core.send(|c| {
            // Forms are single-use; a build failure surfaces as an empty body error below.
            match Self::form(req, &voice_wav) {
                Ok(form) => c.post(&url).multipart(form),
                Err(_) => c.post(&url),
            }
        })?;
        let bytes = resp
            .bytes()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if bytes.is_empty() {
            return Err(BackendError::EmptyAudio);
        }
        let audio = AudioBuffer::from_wav_bytes(&bytes)
            .map_err(|e| BackendError::Decode(e.to_string()))?
            .into_canonical();
        let out = TtsResponse { audio };
        out.validate()?;
        Ok(out)
    }
}

pub struct HttpJudge {
    core: HttpCore,
}

impl HttpJudge {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        Ok(HttpJudge {
            core: HttpCore::new(settings)?,
        })
    }
}

impl JudgeBackend for HttpJudge {
    fn identity(&self) -> BackendIdentity {
        self.core.identity(Stage::MllmJudge, HttpLlm::PATH)
    }

    fn ask(&self, req: &JudgeRequest) -> Result<String, BackendError> {
        if req.audio_wav.is_empty() {
            return Err(BackendError::InvalidRequest("no audio attached".into()));
        }
        let url = self.core.url(HttpLlm::PATH);
        let body = json!({
            "model": self.core.settings.model,
            "modalities": ["text"],
            "temperature": 0.0,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": req.question},
                    {"type": "input_audio", "input_audio": {
                        "data": BASE64.encode(&req.audio_wav),
                        "format": "wav",
                    }},
                ],
            }],
        });
        let resp = self.core.send(|c| c.post(&url).json(&body))?;
        Ok(chat_text(&read_json(resp)?)?.0)
    }
}
