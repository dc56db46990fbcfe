//! The conformance suite runs unchanged against the mocks and against HTTP
//! clients talking to a local stub server that speaks the adapter protocol.

mod support;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::time::Duration;

use audiobook_core::audio::AudioBuffer;
use audiobook_core::backends::conformance::{check_image, check_judge, check_llm, check_tts, script_table};
use audiobook_core::backends::http::HttpSettings;
use audiobook_core::backends::mock::{read_face_marker, VoiceProfile, SYNTH_F0_MAX, SYNTH_F0_MIN};
use audiobook_core::backends::{
    BackendError, CassetteLlm, HttpImage, HttpJudge, HttpLlm, HttpTts, ImageBackend, ImageRequest, LlmBackend,
    LlmRequest, MockImage, ResponseFormat, RetryPolicy, ScriptTable, ScriptedJudge, ScriptedLlm,
    SyntheticVoiceTts, TtsBackend, TtsMode, TtsRequest,
};
use audiobook_core::eval::{extract_pitch, PitchParams};
use axum::extract::{Multipart, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde_json::{json, Value};

fn portrait() -> Vec<u8> {
    MockImage::new()
        .generate(&ImageRequest {
            caption: "portrait photo of an old man, gray beard".into(),
            seed: 7,
            width: 512,
            height: 512,
        })
        .unwrap()
        .bytes
}

// ---- stub server -------------------------------------------------------

#[derive(Clone, Default)]
struct Stub {
    /// Counts chat requests so a test can see whether the network was used.
    chat_calls: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

async fn chat(State(stub): State<Stub>, Json(body): Json<Value>) -> Json<Value> {
    stub.chat_calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
    let content = &body["messages"][body["messages"].as_array().map_or(0, |m| m.len() - 1)]["content"];
    let text = if content.is_array() {
        // Judge request: text question plus an input_audio part.
        "4".to_string()
    } else if body.get("response_format").is_some() {
        r#"{"ok": true}"#.to_string()
    } else {
        format!("The narrator. ({} chars)", content.as_str().unwrap_or("").len())
    };
    Json(json!({"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]}))
}

async fn images(Json(body): Json<Value>) -> Response {
    let size = body["size"].as_str().unwrap_or("");
    let (w, h) = size.split_once('x').unwrap_or(("0", "0"));
    let req = ImageRequest {
        caption: body["prompt"].as_str().unwrap_or("").into(),
        seed: body["seed"].as_u64().unwrap_or(0),
        width: w.parse().unwrap_or(0),
        height: h.parse().unwrap_or(0),
    };
    match MockImage::new().generate(&req) {
        Ok(img) => {
            let b64 = base64::engine::general_purpose::STANDARD.encode(&img.bytes);
            Json(json!({"data": [{"b64_json": b64}]})).into_response()
        }
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

async fn synthesize(mut form: Multipart) -> Response {
    let mut text = HashMap::new();
    let mut files = HashMap::new();
    while let Some(field) = form.next_field().await.unwrap() {
        let name = field.name().unwrap_or("").to_string();
        let data = field.bytes().await.unwrap().to_vec();
        if name == "face_image" || name == "voice_sample" {
            files.insert(name, data);
        } else {
            text.insert(name, String::from_utf8(data).unwrap());
        }
    }
    let voice = files.remove("voice_sample").unwrap_or_default();
    let req = TtsRequest {
        text: text.remove("text").unwrap_or_default(),
        instruction: text.remove("instruction").unwrap_or_default(),
        face_image: files.remove("face_image").unwrap_or_default(),
        face_caption: text.remove("face_caption").unwrap_or_default(),
        voice_sample: if voice.is_empty() {
            AudioBuffer::default()
        } else {
            AudioBuffer::from_wav_bytes(&voice).unwrap()
        },
        mode: if text.get("mode").map(String::as_str) == Some("persona_bootstrap") {
            TtsMode::PersonaBootstrap
        } else {
            TtsMode::SentenceSynthesis
        },
    };
    match SyntheticVoiceTts::new().synthesize(&req) {
        Ok(out) => ([(header::CONTENT_TYPE, "audio/wav")], out.audio.to_wav_bytes()).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok", "checkpoints": ["stub"]}))
}

/// Serves the stub on an ephemeral port from a background runtime.
fn spawn_stub() -> (SocketAddr, Stub) {
    let stub = Stub::default();
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/images/generations", post(images))
        .route("/synthesize", post(synthesize))
        .route("/healthz", get(healthz))
        .with_state(stub.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), stub)
}

fn settings(base_url: &str) -> HttpSettings {
    HttpSettings {
        base_url: base_url.into(),
        model: "stub".into(),
        api_key: "test-key".into(),
        retry: RetryPolicy {
            max_retries: 1,
            base_delay_ms: 10,
        },
        max_in_flight: 2,
        timeout: Duration::from_secs(10),
    }
}

// ---- conformance ---------------------------------------------------------

#[test]
fn mocks_pass_conformance() {
    check_llm(&ScriptedLlm::new(script_table())).unwrap();
    check_image(&MockImage::new(), true).unwrap();
    check_tts(&SyntheticVoiceTts::new(), &portrait()).unwrap();
    check_judge(&ScriptedJudge::new(script_table()), &AudioBuffer::silence(24_000)).unwrap();
}

#[test]
fn http_clients_pass_conformance_against_stub() {
    let (addr, _) = spawn_stub();
    let base = format!("http://{addr}");
    check_llm(&HttpLlm::new(settings(&base)).unwrap()).unwrap();
    check_image(&HttpImage::new(settings(&base)).unwrap(), true).unwrap();
    check_tts(&HttpTts::new(settings(&base)).unwrap(), &portrait()).unwrap();
    check_judge(&HttpJudge::new(settings(&base)).unwrap(), &AudioBuffer::silence(24_000)).unwrap();
}

/// Runs the suite against a real adapter service given by ENGINE_ADAPTER_URL.
#[test]
#[ignore = "needs a running adapter service"]
fn adapter_passes_conformance() {
    let Ok(base) = std::env::var("ENGINE_ADAPTER_URL") else {
        eprintln!("ENGINE_ADAPTER_URL not set; skipping");
        return;
    };
    check_llm(&HttpLlm::new(settings(&base)).unwrap()).unwrap();
    check_image(&HttpImage::new(settings(&base)).unwrap(), false).unwrap();
    check_tts(&HttpTts::new(settings(&base)).unwrap(), &portrait()).unwrap();
    check_judge(&HttpJudge::new(settings(&base)).unwrap(), &AudioBuffer::silence(24_000)).unwrap();
}

#[test]
fn http_errors_are_classified() {
    // Nothing listens on port 9: transport error after the retry budget.
    let llm = HttpLlm::new(settings("http://127.0.0.1:9")).unwrap();
    let req = LlmRequest {
        tag: "t/0".into(),
        system: "s".into(),
        user: "u".into(),
        temperature: 0.0,
        response_format: ResponseFormat::FreeText,
    };
    assert!(matches!(llm.complete(&req), Err(BackendError::Transport(_))));
}

// ---- scripted LLM and cassettes -----------------------------------------

fn free_request(tag: &str, user: &str) -> LlmRequest {
    LlmRequest {
        tag: tag.into(),
        system: "You answer briefly.".into(),
        user: user.into(),
        temperature: 0.0,
        response_format: ResponseFormat::FreeText,
    }
}

#[test]
fn scripted_llm_serves_fixture_verbatim() {
    let table = ScriptTable::from_json(r#"{"extract_speakers/story1/0": {"narrator": {"name": "Mara", "caption": "a keeper"}, "characters": []}}"#).unwrap();
    let llm = ScriptedLlm::new(table);
    let text = llm.complete(&free_request("extract_speakers/story1/0", "x")).unwrap().text;
    let value: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["narrator"]["name"], "Mara");

    let err = llm.complete(&free_request("extract_speakers/story2/1", "x")).unwrap_err();
    assert!(err.to_string().contains("no scripted response"), "{err}");
}

#[test]
fn cassette_replay_is_byte_identical_without_network() {
    let (addr, stub) = spawn_stub();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("llm.cassette.json");
    let req = free_request("attribute_speaker/s/0", "Who says \"Hello,\" said Alice?");

    let recorder = CassetteLlm::record(&path, Box::new(HttpLlm::new(settings(&format!("http://{addr}"))).unwrap())).unwrap();
    let live = recorder.complete(&req).unwrap();
    assert_eq!(recorder.len(), 1);
    let calls = stub.chat_calls.load(std::sync::atomic::Ordering::SeqCst);

    let replay = CassetteLlm::replay(&path).unwrap();
    let again = replay.complete(&req).unwrap();
    assert_eq!(again.text.as_bytes(), live.text.as_bytes());
    assert_eq!(stub.chat_calls.load(std::sync::atomic::Ordering::SeqCst), calls);

    let other = free_request("attribute_speaker/s/1", "something else");
    assert!(matches!(replay.complete(&other), Err(BackendError::NoScriptedResponse(_))));
}

// ---- mock contracts -------------------------------------------------------

#[test]
fn mock_image_is_seeded_and_marked() {
    let image = MockImage::new();
    let req = |seed| ImageRequest {
        caption: "old man, gray beard".into(),
        seed,
        width: 512,
        height: 512,
    };
    let a = image.generate(&req(7)).unwrap();
    let b = image.generate(&req(7)).unwrap();
    let c = image.generate(&req(8)).unwrap();
    assert_eq!(a.bytes, b.bytes);
    assert_ne!(a.bytes, c.bytes);
    assert_eq!(read_face_marker(&a.bytes), Some(true));

    let landscape = MockImage::with_face_pattern(vec![false]).generate(&req(7)).unwrap();
    assert_eq!(read_face_marker(&landscape.bytes), Some(false));
}

fn tts_request(caption: &str, mode: TtsMode, instruction: &str, voice: AudioBuffer) -> TtsRequest {
    TtsRequest {
        text: "Hello. This is how my voice sounds when I tell a story.".into(),
        instruction: instruction.into(),
        face_image: portrait(),
        face_caption: caption.into(),
        voice_sample: voice,
        mode,
    }
}

#[test]
fn bootstrap_is_three_seconds_at_hash_f0() {
    let tts = SyntheticVoiceTts::new();
    let req = tts_request("portrait photo of a deep-voiced giant", TtsMode::PersonaBootstrap, "", AudioBuffer::default());
    let out = tts.synthesize(&req).unwrap();
    assert_eq!(out.audio.len(), 72_000);
    assert_eq!(out.audio, tts.synthesize(&req).unwrap().audio);

    let f0 = VoiceProfile::for_persona(&req.face_image, &req.face_caption).base_f0;
    assert!((SYNTH_F0_MIN..=SYNTH_F0_MAX).contains(&f0));
    let median = extract_pitch(&out.audio, &PitchParams::default()).unwrap().median_f0().unwrap();
    assert!((median - f0).abs() <= 3.0, "median {median} vs base {f0}");
}

#[test]
fn empty_voice_sample_is_rejected_for_sentences() {
    let tts = SyntheticVoiceTts::new();
    let req = tts_request("portrait photo of a giant", TtsMode::SentenceSynthesis, "Speak calmly.", AudioBuffer::default());
    assert!(matches!(tts.synthesize(&req), Err(BackendError::InvalidRequest(_))));
}

#[test]
fn distinct_personas_are_separable_by_pitch() {
    let tts = SyntheticVoiceTts::new();
    let face = portrait();
    let mut checked = 0;
    let captions: Vec<String> = (0..12).map(|i| format!("portrait photo of villager number {i}")).collect();
    let medians: Vec<(f64, f64)> = captions
        .iter()
        .map(|c| {
            let req = TtsRequest {
                face_image: face.clone(),
                ..tts_request(c, TtsMode::PersonaBootstrap, "", AudioBuffer::default())
            };
            let audio = tts.synthesize(&req).unwrap().audio;
            let base = VoiceProfile::for_persona(&face, c).base_f0;
            (base, extract_pitch(&audio, &PitchParams::default()).unwrap().median_f0().unwrap())
        })
        .collect();
    for i in 0..medians.len() {
        for j in i + 1..medians.len() {
            let (bi, mi) = medians[i];
            let (bj, mj) = medians[j];
            if (bi - bj).abs() >= 20.0 {
                checked += 1;
                assert_eq!(bi < bj, mi < mj, "bases {bi}/{bj} medians {mi}/{mj}");
                assert!((mi - mj).abs() > 10.0);
            }
        }
    }
    assert!(checked > 10, "only {checked} pairs 20 Hz apart");
}
