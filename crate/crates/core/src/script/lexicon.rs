//! Speech-relevance filter over the shipped delivery lexicon.

use std::sync::OnceLock;

const LEXICON: &str = include_str!("../../data/delivery_lexicon.txt");

struct Lexicon {
    words: Vec<String>,
    prefixes: Vec<String>,
}

fn lexicon() -> &'static Lexicon {
    static L: OnceLock<Lexicon> = OnceLock::new();
    L.get_or_init(|| {
        let mut lex = Lexicon {
            words: Vec::new(),
            prefixes: Vec::new(),
        };
        for entry in LEXICON.lines().map(str::trim) {
            if entry.is_empty() || entry.starts_with('#') {
                continue;
            }
            match entry.strip_suffix('*') {
                Some(prefix) => lex.prefixes.push(prefix.to_lowercase()),
                None => lex.words.push(entry.to_lowercase()),
            }
        }
        lex
    })
}

/// True iff some word of `text` is a delivery term.
pub fn is_speech_relevant(text: &str) -> bool {
    let lex = lexicon();
    text.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .any(|w| lex.words.contains(&w) || lex.prefixes.iter().any(|p| w.starts_with(p.as_str())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delivery_words_match() {
        assert!(is_speech_relevant("Whispering, barely audible."));
        assert!(is_speech_relevant("Use a calm and reassuring tone."));
        assert!(!is_speech_relevant("The character wears a red coat."));
        assert!(!is_speech_relevant("He has blue eyes and a scar."));
    }
}
