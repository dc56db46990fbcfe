//! Rule-based, quote-aware sentence segmentation.
//!
//! A sentence ends at a run of terminators (`.`, `!`, `?`, `…`) followed by
//! optional closing punctuation and then whitespace or end of text, except
//! when:
//!
//! * the terminator is a lone `.` after an entry of the abbreviation table or
//!   a single-letter initial,
//! * the terminator sits inside a double-quoted passage that is still open,
//! * a closing quote (or an ellipsis) is followed by a lowercase word, as in
//!   `"Stop!" she cried.`
//!
//! A blank line always ends a sentence and resets the quote state. Spans are
//! byte offsets into the original text and never include surrounding
//! whitespace.

use std::collections::HashSet;
use std::sync::OnceLock;

use super::Sentence;

const ABBREVIATION_TABLE: &str = include_str!("../../data/abbreviations.txt");

fn abbreviations() -> &'static HashSet<String> {
    static TABLE: OnceLock<HashSet<String>> = OnceLock::new();
    TABLE.get_or_init(|| {
        ABBREVIATION_TABLE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect()
    })
}

/// Returns true if `token` (lowercase, no trailing period) is in the shipped table.
pub fn is_abbreviation(token: &str) -> bool {
    abbreviations().contains(&token.to_lowercase())
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

fn is_plain_closer(c: char) -> bool {
    matches!(c, ')' | ']' | '’' | '\'' | '»')
}

/// Splits `text` into sentences. Total on any input; whitespace-only input
/// yields an empty list.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_end = |i: usize| -> usize {
        chars.get(i).map(|&(p, _)| p).unwrap_or(text.len())
    };

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start: Option<usize> = None;
    let mut in_quote = false;
    let mut i = 0;

    while i < chars.len() {
        let (pos, ch) = chars[i];

        if start.is_none() {
            if !ch.is_whitespace() {
                start = Some(pos);
            } else {
                i += 1;
                continue;
            }
        }

        if ch == '\n' {
            let ws_end = skip_whitespace(&chars, i);
            if chars[i + 1..ws_end].iter().any(|&(_, c)| c == '\n') {
                if let Some(s) = start.take() {
                    spans.push((s, trim_end(text, s, pos)));
                }
                in_quote = false;
                i = ws_end;
                continue;
            }
        }

        match ch {
            '“' => in_quote = true,
            '”' => in_quote = false,
            '"' => in_quote = !in_quote,
            _ => {}
        }

        if !is_terminator(ch) {
            i += 1;
            continue;
        }

        let mut j = i;
        let mut dots = 0usize;
        let mut ellipsis = false;
        while j < chars.len() && is_terminator(chars[j].1) {
            match chars[j].1 {
                '.' => dots += 1,
                '…' => ellipsis = true,
                _ => {}
            }
            j += 1;
        }
        let run_len = j - i;
        if dots >= 2 {
            ellipsis = true;
        }

        let mut closed_quote = false;
        while j < chars.len() {
            let c = chars[j].1;
            if c == '”' || (c == '"' && in_quote) {
                in_quote = false;
                closed_quote = true;
                j += 1;
            } else if is_plain_closer(c) {
                j += 1;
            } else {
                break;
            }
        }

        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        if !at_boundary {
            i = j;
            continue;
        }

        let lone_period = run_len == 1 && ch == '.';
        let suppressed = (lone_period && precedes_abbreviation(text, &chars, i))
            || in_quote
            || ((closed_quote || ellipsis) && continues_lowercase(&chars, j));

        if !suppressed {
            if let Some(s) = start.take() {
                spans.push((s, byte_end(j)));
            }
        }
        i = j;
    }

    if let Some(s) = start {
        spans.push((s, trim_end(text, s, text.len())));
    }

    spans
        .into_iter()
        .enumerate()
        .map(|(index, (s, e))| Sentence {
            index,
            text: text[s..e].to_string(),
            span: (s, e),
        })
        .collect()
}

fn skip_whitespace(chars: &[(usize, char)], mut i: usize) -> usize {
    while i < chars.len() && chars[i].1.is_whitespace() {
        i += 1;
    }
    i
}

fn trim_end(text: &str, start: usize, end: usize) -> usize {
    start + text[start..end].trim_end().len()
}

/// True if the word ending right before the period at `dot` is an
/// abbreviation or a single-letter initial (other than the pronoun "I").
fn precedes_abbreviation(text: &str, chars: &[(usize, char)], dot: usize) -> bool {
    let mut k = dot;
    while k > 0 {
        let c = chars[k - 1].1;
        if c.is_alphabetic() || c == '.' {
            k -= 1;
        } else {
            break;
        }
    }
    if k == dot {
        return false;
    }
    let token = &text[chars[k].0..chars[dot].0];
    let mut letters = token.chars();
    if let (Some(only), None) = (letters.next(), letters.next()) {
        if only.is_uppercase() && only != 'I' {
            return true;
        }
    }
    is_abbreviation(token.trim_start_matches('.'))
}

/// True if the next word after `j` starts with a lowercase letter and no
/// paragraph break intervenes.
fn continues_lowercase(chars: &[(usize, char)], j: usize) -> bool {
    let k = skip_whitespace(chars, j);
    if chars[j..k].iter().filter(|&&(_, c)| c == '\n').count() >= 2 {
        return false;
    }
    chars.get(k).is_some_and(|&(_, c)| c.is_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(input: &str) -> Vec<String> {
        segment_sentences(input).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn two_plain_sentences() {
        assert_eq!(texts("Hello. Bye."), vec!["Hello.", "Bye."]);
    }

    #[test]
    fn dialogue_with_lowercase_tag_is_one_sentence() {
        assert_eq!(texts("\"Stop!\" she cried."), vec!["\"Stop!\" she cried."]);
        assert_eq!(
            texts("“Where are you going?” asked Tom. He frowned."),
            vec!["“Where are you going?” asked Tom.", "He frowned."]
        );
    }

    #[test]
    fn dialogue_followed_by_capitalized_sentence_splits() {
        assert_eq!(
            texts("\"Run!\" Tom shouted it twice."),
            vec!["\"Run!\"", "Tom shouted it twice."]
        );
    }

    #[test]
    fn abbreviation_suppresses_split() {
        assert_eq!(texts("Mr. Smith left."), vec!["Mr. Smith left."]);
        assert_eq!(
            texts("Dr. Watson met Mrs. Hudson at St. Paul's. They talked."),
            vec!["Dr. Watson met Mrs. Hudson at St. Paul's.", "They talked."]
        );
        assert_eq!(texts("Bring fruit, e.g. apples. Go."), vec!["Bring fruit, e.g. apples.", "Go."]);
    }

    #[test]
    fn initials_do_not_split_but_pronoun_i_does() {
        assert_eq!(texts("J. R. Tolkien wrote it."), vec!["J. R. Tolkien wrote it."]);
        assert_eq!(texts("So did I. Then we left."), vec!["So did I.", "Then we left."]);
    }

    #[test]
    fn open_quotation_keeps_multiple_clauses_together() {
        assert_eq!(
            texts("\"I came. I saw. I won.\" He smiled."),
            vec!["\"I came. I saw. I won.\"", "He smiled."]
        );
    }

    #[test]
    fn blank_line_forces_boundary_and_resets_quotes() {
        assert_eq!(
            texts("The Title\n\n\"Unclosed speech\n\nNext paragraph. End."),
            vec!["The Title", "\"Unclosed speech", "Next paragraph.", "End."]
        );
    }

    #[test]
    fn single_newlines_do_not_split() {
        assert_eq!(texts("A wrapped\nline here. Next."), vec!["A wrapped\nline here.", "Next."]);
    }

    #[test]
    fn ellipsis_followed_by_lowercase_continues() {
        assert_eq!(texts("Well... maybe not. Fine."), vec!["Well... maybe not.", "Fine."]);
        assert_eq!(texts("Wait… Go!"), vec!["Wait…", "Go!"]);
    }

    #[test]
    fn terminator_runs_and_unterminated_tail() {
        assert_eq!(texts("What?! No way"), vec!["What?!", "No way"]);
        assert_eq!(texts("3.14 is pi. Yes."), vec!["3.14 is pi.", "Yes."]);
    }

    #[test]
    fn whitespace_only_yields_nothing() {
        assert!(segment_sentences(" \n\t ").is_empty());
    }

    #[test]
    fn spans_are_exact_byte_ranges() {
        let text = "  Héllo wörld.  “Ça va?” she said.\n";
        for s in segment_sentences(text) {
            assert_eq!(&text[s.span.0..s.span.1], s.text);
        }
    }
}
