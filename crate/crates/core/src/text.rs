//! Tokenization shared by the annotators, the masking engine and the toy
//! language model.
//!
//! A token is either a maximal run of alphanumeric characters or a single
//! non-whitespace, non-alphanumeric character. Offsets are byte offsets into
//! the tokenized string so spans can be cut out of the original text exactly.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.start..self.end]
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    tokenize_at(text, 0)
}

/// Tokenizes `text` and shifts every offset by `base`.
pub fn tokenize_at(text: &str, base: usize) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        let mut end = start + c.len_utf8();
        if c.is_alphanumeric() {
            while let Some(&(i, next)) = chars.peek() {
                if !next.is_alphanumeric() {
                    break;
                }
                end = i + next.len_utf8();
                chars.next();
            }
        }
        tokens.push(Token {
            start: base + start,
            end: base + end,
        });
    }
    tokens
}

/// Lowercased token strings.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .iter()
        .map(|t| t.text(text).to_lowercase())
        .collect()
}

pub fn is_sentence_final(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric())
}

/// Joins tokens with single spaces, without a space before punctuation.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        if !out.is_empty() && !is_punctuation(tok) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(text: &str) -> Vec<&str> {
        tokenize(text).iter().map(|t| t.text(text)).collect()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(words("pt on CPAP, sat 92%."), ["pt", "on", "CPAP", ",", "sat", "92", "%", "."]);
        assert_eq!(words("  T2-weighted\tscan "), ["T2", "-", "weighted", "scan"]);
        assert!(words("   ").is_empty());
    }

    #[test]
    fn offsets_are_bytes_and_shiftable() {
        let text = "café au lait";
        let toks = tokenize_at(text, 10);
        assert_eq!(toks[0], Token { start: 10, end: 15 });
        assert_eq!(toks[1].start, 16);
    }

    #[test]
    fn detokenize_attaches_punctuation() {
        assert_eq!(detokenize(&["heart", "failure", ",", "stable", "."]), "heart failure, stable.");
        assert_eq!(detokenize::<&str>(&[]), "");
    }
}
