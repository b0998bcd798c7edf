//! Generation metrics and lifelong aggregates. All scores lie in `[0, 1]`.

mod lifelong;
mod ngram;

pub use lifelong::{m_first, m_seen, Aggregate, MetricMatrix};
pub use ngram::{bleu, corpus_mean, meteor_lite, rouge_l, rouge_l_beta, BLEU_SMOOTHING, ROUGE_L_BETA};

use crate::error::Result;

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 6] = ["bleu1", "bleu2", "bleu3", "bleu4", "meteor_lite", "rouge_l"];

/// Scores a corpus with every metric in [`METRIC_NAMES`] order.
pub fn score_corpus<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R]) -> Result<[f64; 6]> {
    Ok([
        bleu(candidates, references, 1)?,
        bleu(candidates, references, 2)?,
        bleu(candidates, references, 3)?,
        bleu(candidates, references, 4)?,
        corpus_mean(candidates, references, meteor_lite)?,
        corpus_mean(candidates, references, rouge_l)?,
    ])
}
