//! Per-sentence speaker attribution and reading instructions.

mod lexicon;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::schema::strip_code_fence;
use crate::backends::{BackendError, LlmBackend, LlmRequest, ResponseFormat};
use crate::prompts;
use crate::story::{
    segment_sentences, ContextWindowing, FallbackCounters, ScriptLine, Sentence, SpeakerPersona,
    Story,
};

pub use lexicon::is_speech_relevant;

pub const FALLBACK_INSTRUCTION: &str = "Read in a neutral, steady tone.";
pub const MAX_INSTRUCTION_CHARS: usize = 300;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("persona set has no narrator")]
    NoNarrator,
    #[error("attribution of sentence {index}: {source}")]
    Attribution { index: usize, source: BackendError },
    #[error("instruction for sentence {index}: {source}")]
    Instruction { index: usize, source: BackendError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptConfig {
    pub attribution_temperature: f32,
    pub instruction_temperature: f32,
    /// Stories longer than this (characters) are shown to the LLM as a window.
    pub context_budget_chars: usize,
    pub window_radius: usize,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        ScriptConfig {
            attribution_temperature: 0.0,
            instruction_temperature: 0.7,
            context_budget_chars: 48_000,
            window_radius: 20,
        }
    }
}

/// The script file: one line per sentence plus fallback bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub story_id: String,
    pub lines: Vec<ScriptLine>,
    pub fallbacks: FallbackCounters,
    pub context_windowing: ContextWindowing,
}

impl Script {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("script serializes");
        bytes.push(b'\n');
        bytes
    }
}

/// What the LLM sees as "the story" for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryContext {
    pub label: String,
    pub text: String,
}

pub fn windowing(story: &Story, config: &ScriptConfig) -> ContextWindowing {
    ContextWindowing {
        applied: Story::normalized(&story.raw_text).chars().count() > config.context_budget_chars,
        radius: config.window_radius,
        budget_chars: config.context_budget_chars,
    }
}

pub fn story_context(
    story: &Story,
    index: usize,
    personas: &[SpeakerPersona],
    windowing: &ContextWindowing,
) -> StoryContext {
    if !windowing.applied {
        return StoryContext {
            label: "Story".into(),
            text: Story::normalized(&story.raw_text),
        };
    }
    let lo = index.saturating_sub(windowing.radius);
    let hi = (index + windowing.radius).min(story.sentences.len() - 1);
    let excerpt: Vec<String> = story.sentences[lo..=hi]
        .iter()
        .map(|s| Story::normalized(&s.text))
        .collect();
    StoryContext {
        label: format!(
            "Story excerpt (sentences {} to {} of {})",
            lo + 1,
            hi + 1,
            story.sentences.len()
        ),
        text: format!("Cast: {}\n\n{}", roster(personas), excerpt.join(" ")),
    }
}

/// One line per persona: name, narrator mark, caption.
pub fn roster(personas: &[SpeakerPersona]) -> String {
    personas
        .iter()
        .map(|p| {
            let mark = if p.is_narrator { " (narrator)" } else { "" };
            format!("- {}{mark}: {}", p.name_or_role, p.caption)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn narrator(personas: &[SpeakerPersona]) -> Result<&SpeakerPersona, ScriptError> {
    personas.iter().find(|p| p.is_narrator).ok_or(ScriptError::NoNarrator)
}

fn strip_wrapping(s: &str) -> &str {
    s.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '.' | ',' | '!' | ':' | ';' | '“' | '”' | '‘' | '’')
    })
}

/// Maps a free-text attribution answer onto a persona id, if it names one.
pub fn parse_speaker(answer: &str, personas: &[SpeakerPersona]) -> Option<String> {
    let body = strip_code_fence(answer);
    let named = match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(obj)) => ["speaker", "name", "speaker_id"]
            .iter()
            .find_map(|k| obj.get(*k).and_then(Value::as_str).map(str::to_string))?,
        _ => body.lines().find(|l| !l.trim().is_empty())?.to_string(),
    };
    let mut name = strip_wrapping(&named);
    for label in ["speaker:", "answer:"] {
        if name.len() >= label.len() && name[..label.len()].eq_ignore_ascii_case(label) {
            name = strip_wrapping(&name[label.len()..]);
        }
    }
    let lowered = name.to_lowercase();
    if lowered == "narrator" || lowered == "the narrator" {
        return personas.iter().find(|p| p.is_narrator).map(|p| p.speaker_id.clone());
    }
    personas
        .iter()
        .find(|p| p.name_or_role.to_lowercase() == lowered || p.speaker_id == lowered)
        .map(|p| p.speaker_id.clone())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribution {
    pub speaker_id: String,
    pub fallback: bool,
}

pub fn attribution_request(
    story: &Story,
    sentence: &Sentence,
    personas: &[SpeakerPersona],
    context: &StoryContext,
    config: &ScriptConfig,
) -> LlmRequest {
    let names: Vec<&str> = personas.iter().map(|p| p.name_or_role.as_str()).collect();
    let sentence_text = Story::normalized(&sentence.text);
    let user = prompts::fill(
        prompts::ATTRIBUTE_SPEAKER.trim_end(),
        &[
            ("roster", roster(personas).as_str()),
            ("story_label", context.label.as_str()),
            ("story", context.text.as_str()),
            ("sentence", sentence_text.as_str()),
        ],
    );
    LlmRequest {
        tag: format!("attribute_speaker/{}/{}", story.id, sentence.index),
        system: format!(
            "You identify speakers in stories. Reply with exactly one of these names: {}.",
            names.join(", ")
        ),
        user,
        temperature: config.attribution_temperature,
        response_format: ResponseFormat::FreeText,
    }
}

pub fn attribute_speaker(
    story: &Story,
    sentence: &Sentence,
    personas: &[SpeakerPersona],
    llm: &dyn LlmBackend,
    context: &StoryContext,
    config: &ScriptConfig,
) -> Result<Attribution, ScriptError> {
    let narrator_id = narrator(personas)?.speaker_id.clone();
    let mut req = attribution_request(story, sentence, personas, context, config);
    let fail = |source| ScriptError::Attribution {
        index: sentence.index,
        source,
    };
    let first = llm.complete(&req).map_err(fail)?.text;
    if let Some(id) = parse_speaker(&first, personas) {
        return Ok(Attribution {
            speaker_id: id,
            fallback: false,
        });
    }
    let names: Vec<&str> = personas.iter().map(|p| p.name_or_role.as_str()).collect();
    req.user = format!(
        "{}\n\nYour previous answer \"{}\" is not one of the listed characters. Answer with exactly one name from this list: {}.",
        req.user,
        first.trim(),
        names.join(", ")
    );
    let second = llm.complete(&req).map_err(fail)?.text;
    if let Some(id) = parse_speaker(&second, personas) {
        return Ok(Attribution {
            speaker_id: id,
            fallback: false,
        });
    }
    tracing::warn!(
        sentence = sentence.index,
        first = %first.trim(),
        second = %second.trim(),
        "attribution_fallback: speaker outside the cast, using narrator"
    );
    Ok(Attribution {
        speaker_id: narrator_id,
        fallback: true,
    })
}

/// First sentence of the model's answer with labels and wrapping quotes removed.
pub fn clean_instruction(answer: &str) -> String {
    let mut text = strip_code_fence(answer).trim();
    for label in ["instruction:", "reading instruction:"] {
        if text.len() >= label.len() && text[..label.len()].eq_ignore_ascii_case(label) {
            text = text[label.len()..].trim();
        }
    }
    let text = text.trim_matches(|c: char| matches!(c, '"' | '“' | '”' | '`' | '*')).trim();
    segment_sentences(text)
        .first()
        .map(|s| s.text.trim_matches(|c: char| matches!(c, '"' | '“' | '”')).trim().to_string())
        .unwrap_or_default()
}

pub fn instruction_is_valid(instruction: &str) -> bool {
    !instruction.is_empty()
        && instruction.chars().count() <= MAX_INSTRUCTION_CHARS
        && is_speech_relevant(instruction)
}

pub fn instruction_request(
    story: &Story,
    sentence: &Sentence,
    speaker: &SpeakerPersona,
    previous: Option<&str>,
    context: &StoryContext,
    config: &ScriptConfig,
) -> LlmRequest {
    let previous_line = previous
        .map(|p| format!("Instruction for the previous sentence: {p}"))
        .unwrap_or_default();
    let transition = if previous.is_some() {
        prompts::TRANSITION_CLAUSE
    } else {
        ""
    };
    let sentence_text = Story::normalized(&sentence.text);
    let user = prompts::fill(
        prompts::GENERATE_INSTRUCTION.trim_end(),
        &[
            ("story_label", context.label.as_str()),
            ("story", context.text.as_str()),
            ("sentence", sentence_text.as_str()),
            ("speaker_name", speaker.name_or_role.as_str()),
            ("speaker_caption", speaker.caption.as_str()),
            ("previous", previous_line.as_str()),
            ("transition", transition),
        ],
    );
    LlmRequest {
        tag: format!("generate_instruction/{}/{}", story.id, sentence.index),
        system: "You are an audiobook director. Reply with one sentence describing only vocal delivery.".into(),
        user,
        temperature: config.instruction_temperature,
        response_format: ResponseFormat::FreeText,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub text: String,
    pub fallback: bool,
}

pub fn generate_instruction(
    story: &Story,
    sentence: &Sentence,
    speaker: &SpeakerPersona,
    previous: Option<&str>,
    llm: &dyn LlmBackend,
    context: &StoryContext,
    config: &ScriptConfig,
) -> Result<Instruction, ScriptError> {
    let mut req = instruction_request(story, sentence, speaker, previous, context, config);
    let fail = |source| ScriptError::Instruction {
        index: sentence.index,
        source,
    };
    let first = clean_instruction(&llm.complete(&req).map_err(fail)?.text);
    if instruction_is_valid(&first) {
        return Ok(Instruction {
            text: first,
            fallback: false,
        });
    }
    tracing::info!(sentence = sentence.index, rejected = %first, "instruction rejected, regenerating");
    req.user.push_str(
        "\n\nYour previous answer was not a usable reading instruction. Give one short sentence about tone, pitch, pace, or emotion of the voice only.",
    );
    let second = clean_instruction(&llm.complete(&req).map_err(fail)?.text);
    if instruction_is_valid(&second) {
        return Ok(Instruction {
            text: second,
            fallback: false,
        });
    }
    tracing::warn!(sentence = sentence.index, "instruction_fallback: using neutral instruction");
    Ok(Instruction {
        text: FALLBACK_INSTRUCTION.into(),
        fallback: true,
    })
}

/// One line per sentence. Attributions run in parallel; instructions run in
/// sentence order because each prompt carries the previous instruction.
pub fn build_script(
    story: &Story,
    personas: &[SpeakerPersona],
    llm: &dyn LlmBackend,
    config: &ScriptConfig,
) -> Result<Script, ScriptError> {
    narrator(personas)?;
    let windowing = windowing(story, config);
    let contexts: Vec<StoryContext> = story
        .sentences
        .iter()
        .map(|s| story_context(story, s.index, personas, &windowing))
        .collect();
    let attributions: Vec<Attribution> = story
        .sentences
        .par_iter()
        .map(|s| attribute_speaker(story, s, personas, llm, &contexts[s.index], config))
        .collect::<Result<_, _>>()?;

    let mut fallbacks = FallbackCounters::default();
    let mut lines = Vec::with_capacity(story.sentences.len());
    let mut previous: Option<String> = None;
    for (sentence, attribution) in story.sentences.iter().zip(attributions) {
        if attribution.fallback {
            fallbacks.attribution_fallback += 1;
        }
        let speaker = personas
            .iter()
            .find(|p| p.speaker_id == attribution.speaker_id)
            .expect("attribution is closed-world");
        let instruction = generate_instruction(
            story,
            sentence,
            speaker,
            previous.as_deref(),
            llm,
            &contexts[sentence.index],
            config,
        )?;
        if instruction.fallback {
            fallbacks.instruction_fallback += 1;
        }
        previous = Some(instruction.text.clone());
        lines.push(ScriptLine {
            sentence_index: sentence.index,
            speaker_id: attribution.speaker_id,
            instruction: instruction.text,
        });
    }

    let ids: HashSet<&str> = personas.iter().map(|p| p.speaker_id.as_str()).collect();
    for line in &lines {
        line.validate(&ids).expect("lines are closed-world with non-empty instructions");
    }
    Ok(Script {
        story_id: story.id.clone(),
        lines,
        fallbacks,
        context_windowing: windowing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioBuffer;

    pub(crate) fn persona(id: &str, name: &str, narrator: bool) -> SpeakerPersona {
        SpeakerPersona {
            speaker_id: id.into(),
            name_or_role: name.into(),
            caption: format!("{name}, drawn from the story"),
            face_image: vec![1],
            face_format: "png".into(),
            face_caption: format!("portrait photo of {name}"),
            voice_sample: AudioBuffer::silence(72_000),
            is_narrator: narrator,
        }
    }

    fn cast() -> Vec<SpeakerPersona> {
        vec![
            persona("narrator", "Mara", true),
            persona("alice", "Alice", false),
            persona("old-tom", "Old Tom", false),
        ]
    }

    #[test]
    fn speaker_answers_are_parsed_leniently() {
        let p = cast();
        assert_eq!(parse_speaker("Alice", &p).as_deref(), Some("alice"));
        assert_eq!(parse_speaker("\"old tom\".", &p).as_deref(), Some("old-tom"));
        assert_eq!(parse_speaker("Speaker: Alice\nbecause", &p).as_deref(), Some("alice"));
        assert_eq!(parse_speaker(r#"{"speaker": "Mara"}"#, &p).as_deref(), Some("narrator"));
        assert_eq!(parse_speaker("The narrator", &p).as_deref(), Some("narrator"));
        assert_eq!(parse_speaker("Charlie", &p), None);
        assert_eq!(parse_speaker("", &p), None);
    }

    #[test]
    fn instructions_are_cleaned_to_one_sentence() {
        assert_eq!(
            clean_instruction("Instruction: \"Use a calm and reassuring tone. Then pause.\""),
            "Use a calm and reassuring tone."
        );
        assert_eq!(clean_instruction("   "), "");
    }

    #[test]
    fn validity_rules() {
        assert!(instruction_is_valid("Use a calm and reassuring tone."));
        assert!(!instruction_is_valid("The character wears a red coat."));
        assert!(!instruction_is_valid(""));
        let long = format!("Speak softly {}.", "and slowly ".repeat(40));
        assert!(!instruction_is_valid(&long));
    }

    #[test]
    fn transition_clause_only_with_previous() {
        let story = Story::from_text(Some("s"), "t", "One. Two.").unwrap();
        let p = cast();
        let w = windowing(&story, &ScriptConfig::default());
        let ctx = story_context(&story, 0, &p, &w);
        let first = instruction_request(&story, &story.sentences[0], &p[0], None, &ctx, &ScriptConfig::default());
        assert!(!first.user.contains("smooth transition"));
        assert!(!first.user.contains("previous sentence"));
        let second = instruction_request(
            &story,
            &story.sentences[1],
            &p[0],
            Some("Speak softly."),
            &ctx,
            &ScriptConfig::default(),
        );
        assert!(second.user.contains("smooth transition"));
        assert!(second.user.contains("Speak softly."));
    }

    #[test]
    fn long_stories_are_windowed() {
        let text: String = (0..100).map(|i| format!("Sentence number {i} is here. ")).collect();
        let story = Story::from_text(Some("s"), "t", &text).unwrap();
        let config = ScriptConfig {
            context_budget_chars: 500,
            ..ScriptConfig::default()
        };
        let w = windowing(&story, &config);
        assert!(w.applied);
        let ctx = story_context(&story, 50, &cast(), &w);
        assert_eq!(ctx.label, "Story excerpt (sentences 31 to 71 of 100)");
        assert!(ctx.text.contains("Sentence number 30 ") && !ctx.text.contains("Sentence number 29 "));
        assert!(ctx.text.contains("Old Tom"));
    }
}
