//! Record/replay wrapper for LLM traffic.
//!
//! A cassette is a JSON array of `{request_hash, response}` entries keyed by
//! [`LlmRequest::wire_hash`]. In replay mode a missing entry is an error; in
//! record mode every live response is appended and the file rewritten.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendIdentity, LlmBackend, LlmRequest, LlmResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    request_hash: String,
    response: LlmResponse,
}

pub struct CassetteLlm {
    mode: CassetteMode,
    path: PathBuf,
    inner: Option<Box<dyn LlmBackend>>,
    entries: Mutex<Vec<Entry>>,
}

impl CassetteLlm {
    /// Replays recorded responses; never touches the network.
    pub fn replay(path: &Path) -> Result<Self, BackendError> {
        Ok(CassetteLlm {
            mode: CassetteMode::Replay,
            path: path.to_path_buf(),
            inner: None,
            entries: Mutex::new(load(path)?),
        })
    }

    /// Forwards to `inner` and appends each exchange to the cassette file.
    pub fn record(path: &Path, inner: Box<dyn LlmBackend>) -> Result<Self, BackendError> {
        let entries = if path.exists() { load(path)? } else { Vec::new() };
        Ok(CassetteLlm {
            mode: CassetteMode::Record,
            path: path.to_path_buf(),
            inner: Some(inner),
            entries: Mutex::new(entries),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn load(path: &Path) -> Result<Vec<Entry>, BackendError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::InvalidRequest(format!("cassette {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| BackendError::Decode(format!("cassette {}: {e}", path.display())))
}

impl LlmBackend for CassetteLlm {
    fn identity(&self) -> BackendIdentity {
        match &self.inner {
            Some(inner) => inner.identity(),
            None => BackendIdentity {
                stage: super::Stage::Llm,
                kind: super::BackendKind::Mock,
                name: format!("cassette:{}", self.path.display()),
                version: "1".into(),
            },
        }
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, BackendError> {
        req.validate()?;
        let hash = req.wire_hash();
        if let Some(hit) = self
            .entries
            .lock()
            .expect("cassette lock")
            .iter()
            .find(|e| e.request_hash == hash)
        {
            return Ok(hit.response.clone());
        }
        let inner = match (&self.mode, &self.inner) {
            (CassetteMode::Record, Some(inner)) => inner,
            _ => return Err(BackendError::NoScriptedResponse(format!("cassette entry {hash}"))),
        };
        let response = inner.complete(req)?;
        let mut entries = self.entries.lock().expect("cassette lock");
        entries.push(Entry {
            request_hash: hash,
            response: response.clone(),
        });
        let json = serde_json::to_string_pretty(&*entries).expect("cassette serializes");
        std::fs::write(&self.path, json)
            .map_err(|e| BackendError::Transport(format!("writing cassette: {e}")))?;
        Ok(response)
    }
}
