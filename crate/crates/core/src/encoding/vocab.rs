use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases and splits into word tokens. Runs of alphanumerics (and `_`)
/// form one token; every other non-space character is a token of its own.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Canonical token-joined form of a text.
pub fn normalize(text: &str) -> String {
    split_tokens(text).join(" ")
}

/// Word vocabulary with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for w in words {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary token {w:?}")));
            }
            if SPECIAL_NAMES.contains(&w.as_str()) || index.contains_key(&w) {
                return Err(Error::Format(format!("duplicate vocabulary token {w:?}")));
            }
            index.insert(w.clone(), tokens.len() as u32);
            tokens.push(w);
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds a vocabulary from a corpus: tokens seen at least `min_count`
    /// times, most frequent first (ties lexicographic), at most `max_size`
    /// entries besides the specials.
    pub fn build<I, S>(corpus: I, min_count: usize, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut docs = 0usize;
        for text in corpus {
            docs += 1;
            for tok in split_tokens(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if docs == 0 {
            return Err(Error::usage("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_count.max(1) && !SPECIAL_NAMES.contains(&tok.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);
        Vocab::from_words(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_SPECIALS
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Token ids for `text`; unknown words map to [`UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_tokens(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Joins non-special tokens with single spaces.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::Index(format!("token id {id} outside vocabulary of {}", self.len())))?;
            if !Vocab::is_special(id) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// One token per line; line `n` (0-based) holds id `n + 4`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for tok in &self.tokens[NUM_SPECIALS..] {
            writeln!(f, "{tok}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Vocab::from_words(text.lines().map(str::to_string))
    }
}

/// Counts inputs cut down to the length limit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TruncationStats {
    pub truncated: usize,
    pub dropped_tokens: usize,
}
