//! Per-run request log and event log, both written as JSON lines.
//!
//! Records carry hashes rather than payloads. The request log is sorted by
//! (stage, key) when written so parallel stages still produce stable files.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::{
    BackendError, BackendIdentity, ImageBackend, ImageRequest, ImageResponse, LlmBackend,
    LlmRequest, LlmResponse,
};
use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub stage: String,
    pub key: String,
    pub detail: Value,
}

#[derive(Debug, Default)]
pub struct RequestLog {
    records: Mutex<Vec<RequestRecord>>,
}

impl RequestLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: &str, key: &str, detail: Value) {
        self.records.lock().expect("request log").push(RequestRecord {
            stage: stage.to_string(),
            key: key.to_string(),
            detail,
        });
    }

    /// Records sorted by (stage, key); entries sharing a key keep call order.
    pub fn records(&self) -> Vec<RequestRecord> {
        let mut records = self.records.lock().expect("request log").clone();
        records.sort_by(|a, b| (&a.stage, &a.key).cmp(&(&b.stage, &b.key)));
        records
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("request log").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        write_jsonl(path, self.records().iter())
    }

    pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<RequestRecord>> {
        read_jsonl(path)
    }
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl Iterator<Item = &'a T>,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// A pipeline event (stage start/finish, cache hits, fallbacks, failures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<Event>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&self, event: &str, stage: &str, detail: Value) {
        tracing::info!(event, stage, %detail, "pipeline event");
        self.events.lock().expect("event log").push(Event {
            event: event.to_string(),
            stage: stage.to_string(),
            detail,
        });
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().expect("event log").clone()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        write_jsonl(path, self.events().iter())
    }
}

/// LLM wrapper that logs every exchange.
pub struct LoggedLlm<'a> {
    pub inner: &'a dyn LlmBackend,
    pub log: &'a RequestLog,
}

impl LlmBackend for LoggedLlm<'_> {
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let result = self.inner.complete(req);
        let outcome = match &result {
            Ok(r) => json!({"response_sha256": sha256_hex(r.text.as_bytes())}),
            Err(e) => json!({"error": e.to_string()}),
        };
        self.log.record(
            "llm",
            &req.tag,
            json!({
                "request_sha256": req.wire_hash(),
                "temperature": req.temperature,
                "outcome": outcome,
            }),
        );
        result
    }
}

/// Image wrapper that logs every request.
pub struct LoggedImage<'a> {
    pub inner: &'a dyn ImageBackend,
    pub log: &'a RequestLog,
}

impl ImageBackend for LoggedImage<'_> {
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }

    fn generate(&self, req: &ImageRequest) -> Result<ImageResponse, BackendError> {
        let result = self.inner.generate(req);
        let outcome = match &result {
            Ok(r) => json!({"image_sha256": sha256_hex(&r.bytes)}),
            Err(e) => json!({"error": e.to_string()}),
        };
        self.log.record(
            "image",
            &format!("{}/{:010}", sha256_hex(req.caption.as_bytes()), req.seed),
            json!({"seed": req.seed, "size": req.width, "outcome": outcome}),
        );
        result
    }
}
