//! End-to-end run orchestration with a content-hash stage cache.
//!
//! Output layout under `<out>/<story_id>/`: `audiobook.wav`, `manifest.json`,
//! `script.json`, `personas/`, `segments/`, `request_log.jsonl`,
//! `events.jsonl`, and `cache/` (stage keys). A manifest is written on every
//! exit path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::backends::{
    BackendError, BackendIdentity, ImageBackend, LlmBackend, TtsBackend, TtsRequest, TtsResponse,
};
use crate::config::{Config, ConfigError};
use crate::hash::{sha256_hex, sha256_parts_hex};
use crate::persona::{self, PersonaDraft};
use crate::prompts;
use crate::runlog::{EventLog, LoggedImage, LoggedLlm, RequestLog};
use crate::script::{self, Script};
use crate::story::{
    load_story, validate_persona_set, AudiobookManifest, FileRef, RunStatus, SpeakerPersona, Story,
};
use crate::synthesis::{self, AudioSegment};

type BuiltPersona = Result<(SpeakerPersona, Vec<persona::FaceAttempt>), persona::PersonaError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Personas,
    Script,
    Audio,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Personas => "personas",
            StageName::Script => "script",
            StageName::Audio => "audio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "personas" => Some(StageName::Personas),
            "script" => Some(StageName::Script),
            "audio" | "synthesis" => Some(StageName::Audio),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load story: {0}")]
    Story(#[from] crate::story::StoryError),
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stage_err(stage: StageName, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.as_str().into(),
        message: e.to_string(),
    }
}

/// Backend handles for one run.
pub struct Backends {
    pub llm: Box<dyn LlmBackend>,
    pub image: Box<dyn ImageBackend>,
    pub tts: Box<dyn TtsBackend>,
}

impl Backends {
    pub fn from_config(config: &Config) -> Result<Self, ConfigError> {
        Ok(Backends {
            llm: config.llm_backend()?,
            image: config.image_backend()?,
            tts: config.tts_backend()?,
        })
    }

    fn identities(&self) -> BTreeMap<String, String> {
        [
            ("llm", self.llm.identity()),
            ("image", self.image.identity()),
            ("tts", self.tts.identity()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub story_id: Option<String>,
    pub force: bool,
    pub stop_after: Option<StageName>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: AudiobookManifest,
    pub cache_hits: Vec<String>,
    pub backend_calls: usize,
}

/// Exclusive ownership of an output directory for one run.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Stage keys persisted under `cache/`.
struct Cache {
    dir: PathBuf,
    force: bool,
}

impl Cache {
    fn hit(&self, name: &str, key: &str) -> bool {
        !self.force
            && std::fs::read_to_string(self.dir.join(format!("{name}.key")))
                .map(|k| k.trim() == key)
                .unwrap_or(false)
    }

    fn store(&self, name: &str, key: &str) -> Result<(), PipelineError> {
        let path = self.dir.join(format!("{name}.key"));
        std::fs::write(&path, format!("{key}\n")).map_err(io_err(&path))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// TTS wrapper logging persona-bootstrap requests.
struct LoggedBootstrap<'a> {
    inner: &'a dyn TtsBackend,
    log: &'a RequestLog,
}

impl TtsBackend for LoggedBootstrap<'_> {
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }

    fn synthesize(&self, req: &TtsRequest) -> Result<TtsResponse, BackendError> {
        let result = self.inner.synthesize(req);
        let outcome = match &result {
            Ok(r) => json!({"audio_sha256": sha256_hex(&r.audio.to_wav_bytes())}),
            Err(e) => json!({"error": e.to_string()}),
        };
        self.log.record(
            "tts",
            &format!("{}/{}", req.mode.as_str(), sha256_hex(req.face_caption.as_bytes())),
            json!({
                "mode": req.mode.as_str(),
                "face_image_sha256": sha256_hex(&req.face_image),
                "face_caption_sha256": sha256_hex(req.face_caption.as_bytes()),
                "voice_sample_empty": req.voice_sample.is_empty(),
                "outcome": outcome,
            }),
        );
        result
    }
}

struct Run<'a> {
    config: &'a Config,
    backends: &'a Backends,
    story: Story,
    out_dir: PathBuf,
    cache: Cache,
    log: RequestLog,
    events: EventLog,
    cache_hits: Vec<String>,
}

impl Run<'_> {
    fn hit(&mut self, name: &str, stage: StageName) {
        self.events.emit("cache_hit", stage.as_str(), json!({"entry": name}));
        self.cache_hits.push(name.to_string());
    }

    fn personas(&mut self, manifest: &mut AudiobookManifest) -> Result<Vec<SpeakerPersona>, PipelineError> {
        let stage = StageName::Personas;
        self.events.emit("stage_start", stage.as_str(), json!(null));
        let persona_cfg = persona::PersonaConfig {
            seed: self.config.seed,
            ..self.config.persona
        };
        let llm = LoggedLlm {
            inner: self.backends.llm.as_ref(),
            log: &self.log,
        };

        let speakers_key = sha256_parts_hex(&[
            Story::normalized(&self.story.raw_text).as_bytes(),
            self.backends.llm.identity().to_string().as_bytes(),
            serde_json::to_string(&persona_cfg).expect("config").as_bytes(),
            prompts::EXTRACT_SPEAKERS_SYSTEM.as_bytes(),
            prompts::EXTRACT_SPEAKERS_USER.as_bytes(),
        ]);
        let speakers_path = self.out_dir.join("cache/speakers.json");
        let cached: Option<Vec<PersonaDraft>> = if self.cache.hit("speakers", &speakers_key) {
            std::fs::read(&speakers_path)
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok())
        } else {
            None
        };
        let drafts = match cached {
            Some(d) => {
                self.hit("speakers", stage);
                d
            }
            None => {
                let d = persona::extract_speakers(&self.story, &llm, &persona_cfg)
                    .map_err(|e| stage_err(stage, e))?;
                write_file(&speakers_path, &serde_json::to_vec_pretty(&d).expect("drafts"))?;
                self.cache.store("speakers", &speakers_key)?;
                d
            }
        };
        self.events.emit(
            "speakers",
            stage.as_str(),
            json!({"count": drafts.len(), "ids": drafts.iter().map(|d| &d.speaker_id).collect::<Vec<_>>()}),
        );

        let root = self.out_dir.join("personas");
        let keys: Vec<String> = drafts
            .iter()
            .map(|d| {
                sha256_parts_hex(&[
                    serde_json::to_string(d).expect("draft").as_bytes(),
                    self.backends.image.identity().to_string().as_bytes(),
                    self.backends.tts.identity().to_string().as_bytes(),
                    serde_json::to_string(&persona_cfg).expect("config").as_bytes(),
                ])
            })
            .collect();
        let mut slots: Vec<Option<SpeakerPersona>> = Vec::with_capacity(drafts.len());
        for (d, key) in drafts.iter().zip(&keys) {
            let name = format!("persona-{}", d.speaker_id);
            let reused = if self.cache.hit(&name, key) {
                persona::read_persona(&root.join(&d.speaker_id)).ok()
            } else {
                None
            };
            if reused.is_some() {
                self.hit(&name, stage);
            }
            slots.push(reused);
        }

        let image = LoggedImage {
            inner: self.backends.image.as_ref(),
            log: &self.log,
        };
        let tts = LoggedBootstrap {
            inner: self.backends.tts.as_ref(),
            log: &self.log,
        };
        let built: Vec<(usize, BuiltPersona)> = drafts
            .par_iter()
            .enumerate()
            .filter(|(i, _)| slots[*i].is_none())
            .map(|(i, d)| (i, persona::build_persona(d, &image, &tts, &persona_cfg)))
            .collect();
        for (i, result) in built {
            let (p, attempts) = result.map_err(|e| stage_err(stage, e))?;
            self.events.emit(
                "face_attempts",
                stage.as_str(),
                json!({"speaker_id": p.speaker_id, "attempts": attempts}),
            );
            persona::write_persona(&root, &p).map_err(|e| stage_err(stage, e))?;
            self.cache.store(&format!("persona-{}", p.speaker_id), &keys[i])?;
            slots[i] = Some(p);
        }
        let personas: Vec<SpeakerPersona> = slots.into_iter().map(|p| p.expect("filled")).collect();
        validate_persona_set(&personas).map_err(|e| stage_err(stage, e))?;

        // Drop persona directories left over from an earlier cast.
        if let Ok(entries) = std::fs::read_dir(&root) {
            for entry in entries.flatten() {
                let name = entry.file_name().to_string_lossy().to_string();
                if !personas.iter().any(|p| p.speaker_id == name) {
                    let _ = std::fs::remove_dir_all(entry.path());
                }
            }
        }
        manifest.personas = personas
            .iter()
            .map(|p| persona::write_persona(&root, p))
            .collect::<Result<_, _>>()
            .map_err(|e| stage_err(stage, e))?;
        self.events.emit("stage_done", stage.as_str(), json!(null));
        Ok(personas)
    }

    fn script(
        &mut self,
        personas: &[SpeakerPersona],
        manifest: &mut AudiobookManifest,
    ) -> Result<Script, PipelineError> {
        let stage = StageName::Script;
        self.events.emit("stage_start", stage.as_str(), json!(null));
        let persona_hashes: Vec<String> = manifest.personas.iter().map(|p| p.persona.sha256.clone()).collect();
        let key = sha256_parts_hex(&[
            Story::normalized(&self.story.raw_text).as_bytes(),
            persona_hashes.join(",").as_bytes(),
            self.backends.llm.identity().to_string().as_bytes(),
            serde_json::to_string(&self.config.script).expect("config").as_bytes(),
            prompts::ATTRIBUTE_SPEAKER.as_bytes(),
            prompts::GENERATE_INSTRUCTION.as_bytes(),
        ]);
        let path = self.out_dir.join("script.json");
        let cached: Option<Script> = if self.cache.hit("script", &key) {
            std::fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok())
        } else {
            None
        };
        let script = match cached {
            Some(s) => {
                self.hit("script", stage);
                s
            }
            None => {
                let llm = LoggedLlm {
                    inner: self.backends.llm.as_ref(),
                    log: &self.log,
                };
                let s = script::build_script(&self.story, personas, &llm, &self.config.script)
                    .map_err(|e| stage_err(stage, e))?;
                write_file(&path, &s.to_json_bytes())?;
                self.cache.store("script", &key)?;
                s
            }
        };
        if script.fallbacks.attribution_fallback + script.fallbacks.instruction_fallback > 0 {
            self.events.emit("fallbacks", stage.as_str(), json!(script.fallbacks));
        }
        manifest.lines = script.lines.clone();
        manifest.fallbacks = script.fallbacks;
        manifest.context_windowing = script.context_windowing;
        self.events.emit("stage_done", stage.as_str(), json!({"lines": script.lines.len()}));
        Ok(script)
    }

    fn audio(
        &mut self,
        personas: &[SpeakerPersona],
        script: &Script,
        manifest: &mut AudiobookManifest,
    ) -> Result<(), PipelineError> {
        let stage = StageName::Audio;
        self.events.emit("stage_start", stage.as_str(), json!(null));
        let texts: Vec<String> = self
            .story
            .sentences
            .iter()
            .map(|s| Story::normalized(&s.text))
            .collect();
        let tts_id = self.backends.tts.identity().to_string();
        let line_key = |i: usize| {
            let line = &script.lines[i];
            let p = personas
                .iter()
                .find(|p| p.speaker_id == line.speaker_id)
                .map(|p| serde_json::to_string(&p.fixed_input_hashes()).expect("hashes"))
                .unwrap_or_default();
            sha256_parts_hex(&[
                serde_json::to_string(line).expect("line").as_bytes(),
                texts.get(line.sentence_index).map(String::as_bytes).unwrap_or_default(),
                p.as_bytes(),
                tts_id.as_bytes(),
            ])
        };
        let keys: Vec<String> = (0..script.lines.len()).map(line_key).collect();

        let mut segments: Vec<Option<AudioSegment>> = vec![None; script.lines.len()];
        let mut hits = 0;
        for (i, line) in script.lines.iter().enumerate() {
            let name = format!("segment-{:04}", line.sentence_index);
            if !self.cache.hit(&name, &keys[i]) {
                continue;
            }
            let path = self.out_dir.join(synthesis::segment_path(line.sentence_index));
            if let Ok(audio) = AudioBuffer::read_wav(&path) {
                segments[i] = Some(AudioSegment {
                    sentence_index: line.sentence_index,
                    speaker_id: line.speaker_id.clone(),
                    audio,
                });
                hits += 1;
            }
        }
        if hits > 0 {
            self.hit(&format!("segments ({hits}/{})", script.lines.len()), stage);
        }
        let missing: Vec<_> = script
            .lines
            .iter()
            .enumerate()
            .filter(|(i, _)| segments[*i].is_none())
            .map(|(_, l)| l.clone())
            .collect();
        let fresh = synthesis::synthesize_all(
            &missing,
            &texts,
            personas,
            self.backends.tts.as_ref(),
            Some(&self.log),
            self.config.concurrency,
        )
        .map_err(|e| stage_err(stage, e))?;
        let mut fresh = fresh.into_iter();
        for (i, line) in script.lines.iter().enumerate() {
            if segments[i].is_some() {
                continue;
            }
            let seg = fresh.next().expect("one segment per missing line");
            let path = self.out_dir.join(synthesis::segment_path(line.sentence_index));
            write_file(&path, &seg.audio.to_wav_bytes())?;
            self.cache.store(&format!("segment-{:04}", line.sentence_index), &keys[i])?;
            segments[i] = Some(seg);
        }
        let segments: Vec<AudioSegment> = segments.into_iter().map(|s| s.expect("filled")).collect();
        let (audio, refs) =
            synthesis::assemble(&segments, &self.config.assembly).map_err(|e| stage_err(stage, e))?;
        let wav = audio.to_wav_bytes();
        write_file(&self.out_dir.join("audiobook.wav"), &wav)?;
        manifest.segments = refs;
        manifest.total_samples = audio.len();
        manifest.total_duration_s = audio.duration_s();
        manifest.audiobook = Some(FileRef::of("audiobook.wav", &wav));
        manifest.check_consistency().map_err(|e| stage_err(stage, e))?;
        self.events.emit(
            "stage_done",
            stage.as_str(),
            json!({"segments": segments.len(), "duration_s": manifest.total_duration_s}),
        );
        Ok(())
    }

    fn stages(&mut self, manifest: &mut AudiobookManifest, stop_after: Option<StageName>) -> Result<(), PipelineError> {
        let personas = self.personas(manifest)?;
        if stop_after == Some(StageName::Personas) {
            manifest.status = RunStatus::Stopped {
                after_stage: "personas".into(),
            };
            return Ok(());
        }
        let script = self.script(&personas, manifest)?;
        if stop_after == Some(StageName::Script) {
            manifest.status = RunStatus::Stopped {
                after_stage: "script".into(),
            };
            return Ok(());
        }
        self.audio(&personas, &script, manifest)?;
        manifest.status = RunStatus::Complete;
        Ok(())
    }
}

/// Runs the pipeline for one story. The manifest, request log and event log
/// are written whether or not the run succeeds.
pub fn run(
    story_path: &Path,
    config: &Config,
    backends: &Backends,
    out_root: &Path,
    options: &RunOptions,
) -> Result<RunOutcome, PipelineError> {
    let story = load_story(story_path, options.story_id.as_deref())?;
    let out_dir = out_root.join(&story.id);
    std::fs::create_dir_all(out_dir.join("cache")).map_err(io_err(&out_dir))?;
    let _lock = DirLock::acquire(&out_dir)?;

    let mut manifest = AudiobookManifest::empty(&story.id, &config.fingerprint());
    manifest.backend_ids = backends.identities();
    let mut run = Run {
        config,
        backends,
        story,
        cache: Cache {
            dir: out_dir.join("cache"),
            force: options.force,
        },
        out_dir: out_dir.clone(),
        log: RequestLog::new(),
        events: EventLog::new(),
        cache_hits: Vec::new(),
    };
    let result = run.stages(&mut manifest, options.stop_after);
    if let Err(e) = &result {
        let stage = match e {
            PipelineError::Stage { stage, .. } => stage.clone(),
            _ => "io".into(),
        };
        manifest.status = RunStatus::Failed {
            stage: stage.clone(),
            message: e.to_string(),
        };
        run.events.emit("failed", &stage, json!({"error": e.to_string()}));
        if manifest.audiobook.is_none() {
            // Never leave a stale audiobook next to a failed manifest.
            let _ = std::fs::remove_file(out_dir.join("audiobook.wav"));
        }
    }
    write_file(&out_dir.join("manifest.json"), &manifest.to_json_bytes())?;
    let log_path = out_dir.join("request_log.jsonl");
    run.log.write_jsonl(&log_path).map_err(io_err(&log_path))?;
    let events_path = out_dir.join("events.jsonl");
    run.events.write_jsonl(&events_path).map_err(io_err(&events_path))?;
    result?;
    Ok(RunOutcome {
        out_dir,
        manifest,
        backend_calls: run.log.len(),
        cache_hits: run.cache_hits,
    })
}
