//! Regex word tokenizer for metrics and BPE pre-tokenization.
//!
//! Ordered alternation: double-quoted string, single-quoted string, numeric
//! literal, word run, then any single non-whitespace character as the
//! fallback. Whitespace separates matches and is discarded, so concatenating
//! the matched spans plus the skipped whitespace reconstructs the input.

use std::sync::OnceLock;

use regex::Regex;

fn pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#""(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*'|\d+(?:\.\d+)?|\w+|\S"#)
            .expect("word tokenizer pattern is valid")
    })
}

/// Word tokens of `text`, in order. Never drops a non-whitespace character.
pub fn word_tokenize(text: &str) -> Vec<&str> {
    pattern().find_iter(text).map(|m| m.as_str()).collect()
}

/// Byte spans of the word tokens; the gaps between consecutive spans are
/// exactly the whitespace runs. Used by BPE pre-tokenization, which must
/// cover every byte of the input.
pub fn word_spans(text: &str) -> Vec<(usize, usize)> {
    pattern().find_iter(text).map(|m| (m.start(), m.end())).collect()
}
