//! Shared helpers for integration tests and the acceptance harness.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use audiobook_core::audio::AudioBuffer;
use audiobook_core::backends::SyntheticVoiceTts;
use audiobook_core::config::Config;
use audiobook_core::persona::load_personas;
use audiobook_core::pipeline::{run, Backends, RunOptions, RunOutcome};
use audiobook_core::story::{load_story, ScriptLine, SpeakerPersona, Story};
use audiobook_core::synthesis::{assemble, synthesize_all, AssemblyConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn demo_dir() -> PathBuf {
    repo_root().join("demo")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn demo_config(seed: u64) -> Config {
    let mut config = Config::load(&demo_dir().join("mock.json")).expect("demo config");
    config.seed = seed;
    config
}

pub fn run_demo(seed: u64, out: &Path) -> RunOutcome {
    let config = demo_config(seed);
    let backends = Backends::from_config(&config).expect("mock backends");
    run(&demo_dir().join("story.txt"), &config, &backends, out, &RunOptions::default()).expect("demo run")
}

/// Personas and script of a finished run, ready for alternative renditions.
pub struct Rendered {
    pub story: Story,
    pub personas: Vec<SpeakerPersona>,
    pub lines: Vec<ScriptLine>,
    pub texts: Vec<String>,
    pub audio: AudioBuffer,
}

pub fn load_run(outcome: &RunOutcome) -> Rendered {
    let story = load_story(&demo_dir().join("story.txt"), None).expect("story");
    let ids: Vec<String> = outcome.manifest.personas.iter().map(|p| p.speaker_id.clone()).collect();
    let personas = load_personas(&outcome.out_dir.join("personas"), &ids).expect("personas");
    let texts = story.sentences.iter().map(|s| Story::normalized(&s.text)).collect();
    let audio = AudioBuffer::read_wav(&outcome.out_dir.join("audiobook.wav")).expect("audiobook");
    Rendered {
        story,
        personas,
        lines: outcome.manifest.lines.clone(),
        texts,
        audio,
    }
}

pub fn render(r: &Rendered, lines: &[ScriptLine]) -> AudioBuffer {
    let segments = synthesize_all(lines, &r.texts, &r.personas, &SyntheticVoiceTts::new(), None, 1).expect("synthesis");
    assemble(&segments, &AssemblyConfig::default()).expect("assembly").0
}

/// Every line spoken by a persona drawn at random.
pub fn shuffled_personas(r: &Rendered, seed: u64) -> Vec<ScriptLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    r.lines
        .iter()
        .map(|l| ScriptLine {
            speaker_id: r.personas.choose(&mut rng).expect("personas").speaker_id.clone(),
            ..l.clone()
        })
        .collect()
}

/// Personas outside the story's cast, built with the same mocks.
pub fn foreign_pool(seed: u64, n: usize) -> Vec<SpeakerPersona> {
    use audiobook_core::backends::MockImage;
    use audiobook_core::persona::{build_personas, PersonaConfig, PersonaDraft};

    let drafts: Vec<PersonaDraft> = (0..n)
        .map(|k| PersonaDraft {
            speaker_id: format!("stranger-{k}"),
            name_or_role: format!("Stranger {k}"),
            caption: format!("A passer-by, number {k} of the crowd."),
            is_narrator: false,
        })
        .collect();
    let config = PersonaConfig {
        seed,
        ..PersonaConfig::default()
    };
    build_personas(&drafts, &MockImage::new(), &SyntheticVoiceTts::new(), &config).expect("foreign personas")
}

/// A random fraction of lines, each handed to a different voice from `pool`.
pub fn foreign_fraction(r: &Rendered, pool: &[SpeakerPersona], fraction: f64, seed: u64) -> Vec<ScriptLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..r.lines.len()).collect();
    order.shuffle(&mut rng);
    let mut strangers: Vec<&SpeakerPersona> = pool.iter().collect();
    strangers.shuffle(&mut rng);
    let k = (fraction * r.lines.len() as f64).round() as usize;
    assert!(k <= strangers.len(), "pool smaller than the foreign line count");
    let mut lines = r.lines.clone();
    for (&i, p) in order[..k].iter().zip(strangers) {
        lines[i].speaker_id = p.speaker_id.clone();
    }
    lines
}

/// Like [`render`], with extra personas available to the script.
pub fn render_with(r: &Rendered, extra: &[SpeakerPersona], lines: &[ScriptLine]) -> AudioBuffer {
    let personas: Vec<SpeakerPersona> = r.personas.iter().chain(extra).cloned().collect();
    let segments = synthesize_all(lines, &r.texts, &personas, &SyntheticVoiceTts::new(), None, 1).expect("synthesis");
    assemble(&segments, &AssemblyConfig::default()).expect("assembly").0
}

pub const FLAT_INSTRUCTION: &str = "Read in a flat, monotone voice.";

pub fn all_flat(r: &Rendered) -> Vec<ScriptLine> {
    r.lines
        .iter()
        .map(|l| ScriptLine {
            instruction: FLAT_INSTRUCTION.into(),
            ..l.clone()
        })
        .collect()
}

/// Annotated 175-sentence fixture: the cast plus each sentence's speaker and instruction.
pub struct Fixture175 {
    pub story: Story,
    pub personas: Vec<SpeakerPersona>,
    pub speakers: Vec<String>,
    pub instructions: Vec<String>,
}

pub const STORY175_ID: &str = "story175";

/// Personas get real mock faces and voices so the fixture can also be synthesized.
pub fn fixture175() -> Fixture175 {
    use audiobook_core::backends::{MockImage, SyntheticVoiceTts};
    use audiobook_core::persona::{build_personas, slugify, PersonaConfig, PersonaDraft, NARRATOR_ID};

    let story = load_story(&fixture("story175.txt"), Some(STORY175_ID)).expect("fixture story");
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fixture("story175.json")).expect("fixture json")).expect("json");
    let cast = &doc["cast"];
    let mut drafts = vec![PersonaDraft {
        speaker_id: NARRATOR_ID.into(),
        name_or_role: cast["narrator"]["name"].as_str().unwrap().into(),
        caption: cast["narrator"]["caption"].as_str().unwrap().into(),
        is_narrator: true,
    }];
    for c in cast["characters"].as_array().unwrap() {
        let name = c["name"].as_str().unwrap();
        drafts.push(PersonaDraft {
            speaker_id: slugify(name),
            name_or_role: name.into(),
            caption: c["caption"].as_str().unwrap().into(),
            is_narrator: false,
        });
    }
    let personas = build_personas(&drafts, &MockImage::new(), &SyntheticVoiceTts::new(), &PersonaConfig::default())
        .expect("fixture personas");
    let field = |k: &str| -> Vec<String> {
        doc["sentences"].as_array().unwrap().iter().map(|s| s[k].as_str().unwrap().to_string()).collect()
    };
    Fixture175 {
        story,
        personas,
        speakers: field("speaker"),
        instructions: field("instruction"),
    }
}

impl Fixture175 {
    /// Scripted LLM table. `attribution(i, name)` gives the answers served
    /// for sentence i, in order.
    pub fn table(&self, attribution: impl Fn(usize, &str) -> Vec<String>) -> audiobook_core::backends::ScriptTable {
        let mut map = std::collections::HashMap::new();
        for (i, name) in self.speakers.iter().enumerate() {
            map.insert(format!("attribute_speaker/{STORY175_ID}/{i}"), attribution(i, name));
            map.insert(format!("generate_instruction/{STORY175_ID}/{i}"), vec![self.instructions[i].clone()]);
        }
        audiobook_core::backends::ScriptTable::new(map)
    }

    pub fn speaker_id(&self, name: &str) -> String {
        self.personas.iter().find(|p| p.name_or_role == name).expect("cast member").speaker_id.clone()
    }
}
