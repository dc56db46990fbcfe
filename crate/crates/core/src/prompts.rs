//! Prompt templates shipped as data. Placeholders are `{name}`.

pub const EXTRACT_SPEAKERS_SYSTEM: &str = include_str!("../data/prompts/extract_speakers_system.txt");
pub const EXTRACT_SPEAKERS_USER: &str = include_str!("../data/prompts/extract_speakers_user.txt");
pub const ATTRIBUTE_SPEAKER: &str = include_str!("../data/prompts/attribute_speaker.txt");
pub const GENERATE_INSTRUCTION: &str = include_str!("../data/prompts/generate_instruction.txt");

/// Appended to the instruction prompt when a previous instruction exists.
pub const TRANSITION_CLAUSE: &str = " If applicable, make a smooth transition from the previous emotion, and consider the emotions between the characters.";

/// Substitutes `{key}` placeholders in one pass, so substituted text is
/// never rescanned (story text may itself contain braces).
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
