//! Run configuration: one JSON file; every field has a default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::http::HttpSettings;
use crate::backends::{
    BackendError, CassetteLlm, CassetteMode, HttpImage, HttpJudge, HttpLlm, HttpTts, ImageBackend,
    JudgeBackend, LlmBackend, MockImage, RetryPolicy, ScriptTable, ScriptedJudge, ScriptedLlm,
    SyntheticVoiceTts, TtsBackend,
};
use crate::eval::{default_questions, EvalParams};
use crate::hash::{sha256_hex, sha256_parts_hex};
use crate::persona::PersonaConfig;
use crate::script::ScriptConfig;
use crate::synthesis::AssemblyConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("backend setup failed: {0}")]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteConfig {
    pub mode: CassetteMode,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Procedural image or synthetic-voice mock.
    Mock {
        /// Image mock only: per-caption sequence of face / non-face outputs.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        face_pattern: Option<Vec<bool>>,
    },
    /// LLM or judge answering from a fixture table.
    Scripted { fixture: String },
    Http {
        base_url: String,
        #[serde(default)]
        model: String,
        /// Defaults to `ENGINE_<STAGE>_API_KEY`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cassette: Option<CassetteConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub llm: BackendConfig,
    pub image: BackendConfig,
    pub tts: BackendConfig,
    pub judge: BackendConfig,
}

const DEFAULT_ADAPTER: &str = "http://127.0.0.1:8000";

impl Default for BackendsConfig {
    fn default() -> Self {
        let http = |model: &str| BackendConfig::Http {
            base_url: DEFAULT_ADAPTER.into(),
            model: model.into(),
            api_key_env: None,
            cassette: None,
        };
        BackendsConfig {
            llm: http("gpt-4o-2024-08-06"),
            image: http("realistic-vision-v2"),
            tts: http("flespeech"),
            judge: http("gpt-4o-audio-preview"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub backends: BackendsConfig,
    pub persona: PersonaConfig,
    pub script: ScriptConfig,
    pub assembly: AssemblyConfig,
    pub eval: EvalParams,
    /// Judge questions by metric; the shipped set when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_questions: Option<IndexMap<String, String>>,
    pub retry: RetryPolicy,
    /// In-flight cap per HTTP backend and synthesis worker count.
    pub concurrency: usize,
    pub timeout_s: u64,
    /// Directory relative fixture paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            backends: BackendsConfig::default(),
            persona: PersonaConfig::default(),
            script: ScriptConfig::default(),
            assembly: AssemblyConfig::default(),
            eval: EvalParams::default(),
            judge_questions: None,
            retry: RetryPolicy::default(),
            concurrency: 4,
            timeout_s: 300,
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendStage {
    Llm,
    Image,
    Tts,
    Judge,
}

impl BackendStage {
    pub fn name(self) -> &'static str {
        match self {
            BackendStage::Llm => "llm",
            BackendStage::Image => "image",
            BackendStage::Tts => "tts",
            BackendStage::Judge => "judge",
        }
    }

    pub fn default_key_env(self) -> String {
        format!("ENGINE_{}_API_KEY", self.name().to_uppercase())
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Config = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        if self.persona.max_attempts == 0 {
            return bad("persona.max_attempts must be at least 1".into());
        }
        if !crate::backends::IMAGE_SIZES.contains(&self.persona.image_size) {
            return bad(format!("persona.image_size {} unsupported", self.persona.image_size));
        }
        for (stage, b) in self.stages() {
            let unavailable = matches!(
                (stage, b),
                (BackendStage::Llm | BackendStage::Judge, BackendConfig::Mock { .. })
                    | (BackendStage::Image | BackendStage::Tts, BackendConfig::Scripted { .. })
            );
            if unavailable {
                return bad(format!("backend kind not available for {}", stage.name()));
            }
        }
        Ok(())
    }

    fn stages(&self) -> [(BackendStage, &BackendConfig); 4] {
        [
            (BackendStage::Llm, &self.backends.llm),
            (BackendStage::Image, &self.backends.image),
            (BackendStage::Tts, &self.backends.tts),
            (BackendStage::Judge, &self.backends.judge),
        ]
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn judge_questions(&self) -> IndexMap<String, String> {
        self.judge_questions.clone().unwrap_or_else(default_questions)
    }

    /// Hash of the effective configuration, including fixture contents.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut fixtures = String::new();
        for (_, b) in self.stages() {
            if let BackendConfig::Scripted { fixture } = b {
                let digest = std::fs::read(self.resolve(fixture))
                    .map(|bytes| sha256_hex(&bytes))
                    .unwrap_or_else(|_| "missing".into());
                fixtures.push_str(&digest);
            }
        }
        sha256_parts_hex(&[json.as_bytes(), fixtures.as_bytes()])
    }

    fn http_settings(
        &self,
        stage: BackendStage,
        base_url: &str,
        model: &str,
        api_key_env: &Option<String>,
    ) -> Result<HttpSettings, ConfigError> {
        let var = api_key_env.clone().unwrap_or_else(|| stage.default_key_env());
        let api_key = std::env::var(&var).map_err(|_| ConfigError::MissingEnv(var.clone()))?;
        Ok(HttpSettings {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key,
            retry: self.retry,
            max_in_flight: self.concurrency,
            timeout: Duration::from_secs(self.timeout_s),
        })
    }

    pub fn llm_backend(&self) -> Result<Box<dyn LlmBackend>, ConfigError> {
        match &self.backends.llm {
            BackendConfig::Scripted { fixture } => Ok(Box::new(ScriptedLlm::new(
                ScriptTable::from_file(&self.resolve(fixture))?,
            ))),
            BackendConfig::Http {
                base_url,
                model,
                api_key_env,
                cassette,
            } => {
                if let Some(CassetteConfig {
                    mode: CassetteMode::Replay,
                    path,
                }) = cassette
                {
                    return Ok(Box::new(CassetteLlm::replay(&self.resolve(path))?));
                }
                let live = HttpLlm::new(self.http_settings(BackendStage::Llm, base_url, model, api_key_env)?)?;
                match cassette {
                    Some(c) => Ok(Box::new(CassetteLlm::record(&self.resolve(&c.path), Box::new(live))?)),
                    None => Ok(Box::new(live)),
                }
            }
            BackendConfig::Mock { .. } => Err(ConfigError::Invalid("llm cannot be a mock".into())),
        }
    }

    pub fn image_backend(&self) -> Result<Box<dyn ImageBackend>, ConfigError> {
        match &self.backends.image {
            BackendConfig::Mock { face_pattern } => Ok(Box::new(match face_pattern {
                Some(p) => MockImage::with_face_pattern(p.clone()),
                None => MockImage::new(),
            })),
            BackendConfig::Http {
                base_url,
                model,
                api_key_env,
                ..
            } => Ok(Box::new(HttpImage::new(self.http_settings(
                BackendStage::Image,
                base_url,
                model,
                api_key_env,
            )?)?)),
            BackendConfig::Scripted { .. } => Err(ConfigError::Invalid("image cannot be scripted".into())),
        }
    }

    pub fn tts_backend(&self) -> Result<Box<dyn TtsBackend>, ConfigError> {
        match &self.backends.tts {
            BackendConfig::Mock { .. } => Ok(Box::new(SyntheticVoiceTts::new())),
            BackendConfig::Http {
                base_url,
                model,
                api_key_env,
                ..
            } => Ok(Box::new(HttpTts::new(self.http_settings(
                BackendStage::Tts,
                base_url,
                model,
                api_key_env,
            )?)?)),
            BackendConfig::Scripted { .. } => Err(ConfigError::Invalid("tts cannot be scripted".into())),
        }
    }

    pub fn judge_backend(&self) -> Result<Box<dyn JudgeBackend>, ConfigError> {
        match &self.backends.judge {
            BackendConfig::Scripted { fixture } => Ok(Box::new(ScriptedJudge::new(
                ScriptTable::from_file(&self.resolve(fixture))?,
            ))),
            BackendConfig::Http {
                base_url,
                model,
                api_key_env,
                ..
            } => Ok(Box::new(HttpJudge::new(self.http_settings(
                BackendStage::Judge,
                base_url,
                model,
                api_key_env,
            )?)?)),
            BackendConfig::Mock { .. } => Err(ConfigError::Invalid("judge cannot be a mock".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(c.concurrency, 4);
        assert_eq!(c.assembly.gap_ms, 250);
        assert_eq!(c.script.attribution_temperature, 0.0);
        assert_eq!(c.persona.max_attempts, 4);
        assert!(matches!(c.backends.llm, BackendConfig::Http { .. }));
    }

    #[test]
    fn missing_key_names_the_variable() {
        let c = Config {
            backends: BackendsConfig {
                tts: BackendConfig::Http {
                    base_url: "http://127.0.0.1:1".into(),
                    model: String::new(),
                    api_key_env: Some("ENGINE_TEST_UNSET_KEY_VAR".into()),
                    cassette: None,
                },
                ..BackendsConfig::default()
            },
            ..Config::default()
        };
        match c.tts_backend() {
            Err(ConfigError::MissingEnv(v)) => assert_eq!(v, "ENGINE_TEST_UNSET_KEY_VAR"),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn wrong_kind_for_stage_is_rejected() {
        let c: Config = serde_json::from_str(r#"{"backends": {"llm": {"kind": "mock"}}}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_settings() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
