use serde::{Deserialize, Serialize};

/// Tokens of a text plus the exclusive end index of every sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub sentence_boundaries: Vec<usize>,
}

impl TokenSequence {
    /// Builds a sequence from pre-split sentences.
    pub fn from_sentences<S: AsRef<str>>(sentences: &[Vec<S>]) -> Self {
        let mut seq = TokenSequence::default();
        for s in sentences.iter().filter(|s| !s.is_empty()) {
            seq.tokens.extend(s.iter().map(|t| t.as_ref().to_string()));
            seq.sentence_boundaries.push(seq.tokens.len());
        }
        seq
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &[String]> + '_ {
        let mut start = 0;
        self.sentence_boundaries.iter().map(move |&end| {
            let s = &self.tokens[start..end];
            start = end;
            s
        })
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn is_terminal(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?")
}

/// Whitespace tokenizer that peels leading and trailing punctuation off
/// every chunk, one character per token. Hyphens and apostrophes inside a
/// word are kept. A sentence ends after `.`, `!` or `?` at the end of a
/// whitespace chunk, and at end of input.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut seq = TokenSequence::default();
    for chunk in text.split_whitespace() {
        let chars: Vec<(usize, char)> = chunk.char_indices().collect();
        let mut lo = 0;
        while lo < chars.len() && is_punct(chars[lo].1) {
            lo += 1;
        }
        let mut hi = chars.len();
        while hi > lo && is_punct(chars[hi - 1].1) {
            hi -= 1;
        }
        let byte_at = |i: usize| chars.get(i).map_or(chunk.len(), |&(b, _)| b);

        for &(b, c) in &chars[..lo] {
            seq.tokens.push(chunk[b..b + c.len_utf8()].to_string());
        }
        if hi > lo {
            seq.tokens.push(chunk[byte_at(lo)..byte_at(hi)].to_string());
        }
        for &(b, c) in &chars[hi.max(lo)..] {
            seq.tokens.push(chunk[b..b + c.len_utf8()].to_string());
        }

        if seq.tokens.last().is_some_and(|t| is_terminal(t)) {
            seq.sentence_boundaries.push(seq.tokens.len());
        }
    }
    if seq.sentence_boundaries.last().copied() != Some(seq.tokens.len()) && !seq.tokens.is_empty() {
        seq.sentence_boundaries.push(seq.tokens.len());
    }
    seq
}
