//! Unified text-to-text encoding of QG records and word-level token ids.

mod instance;
mod vocab;

use serde::{Deserialize, Serialize};

pub use instance::{Format, QgInstance, ANSWER_PREFIX, DISTRACTOR_PREFIX, PASSAGE_PREFIX};
pub use vocab::{normalize, split_tokens, TruncationStats, Vocab, BOS, EOS, NUM_SPECIALS, PAD, UNK};

use crate::error::{Error, Result};

/// Default input length limit in tokens.
pub const DEFAULT_MAX_INPUT_LEN: usize = 512;

/// A model-ready pair: unified input ids and EOS-terminated target ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedExample {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub source_index: usize,
}

impl EncodedExample {
    /// Number of scored target positions (EOS included, PAD excluded).
    pub fn target_len(&self) -> usize {
        self.target_ids.iter().filter(|&&t| t != PAD).count()
    }
}

/// Tokenizes `text` and tail-truncates it to `max_len`.
pub fn tokenize_input(text: &str, vocab: &Vocab, max_len: usize, stats: &mut TruncationStats) -> Vec<u32> {
    let mut ids = vocab.tokenize(text);
    if ids.len() > max_len {
        stats.truncated += 1;
        stats.dropped_tokens += ids.len() - max_len;
        ids.truncate(max_len);
    }
    ids
}

/// Question ids followed by EOS. Targets are never truncated.
pub fn tokenize_target(question: &str, vocab: &Vocab) -> Vec<u32> {
    let mut ids = vocab.tokenize(question);
    ids.push(EOS);
    ids
}

/// Encodes one instance through the single unified-text path.
pub fn encode(
    instance: &QgInstance,
    vocab: &Vocab,
    max_len: usize,
    source_index: usize,
    stats: &mut TruncationStats,
) -> Result<EncodedExample> {
    if max_len == 0 {
        return Err(Error::usage("max input length must be positive"));
    }
    let text = instance.unify()?;
    Ok(EncodedExample {
        input_ids: tokenize_input(&text, vocab, max_len, stats),
        target_ids: tokenize_target(&instance.question, vocab),
        source_index,
    })
}

/// Token ids of the prefix markers, which carry no dataset content.
pub fn template_token_ids(vocab: &Vocab) -> Vec<u32> {
    [ANSWER_PREFIX, PASSAGE_PREFIX, DISTRACTOR_PREFIX]
        .iter()
        .flat_map(|p| split_tokens(p))
        .filter_map(|t| vocab.id(&t))
        .collect()
}
