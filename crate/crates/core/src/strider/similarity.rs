//! TF-IDF cosine between the incoming dataset and the retained memory.
//!
//! IDF statistics come from the pooled collection in which every example is
//! its own document, `idf = ln((1 + n_docs) / (1 + df)) + 1`. Each side is
//! then summed into a single term-frequency vector and weighted by that IDF.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Aggregate TF·IDF vectors of two document sides over a shared IDF table.
pub fn tfidf_vectors<T: Ord + Clone>(left: &[Vec<T>], right: &[Vec<T>]) -> (BTreeMap<T, f64>, BTreeMap<T, f64>) {
    let n_docs = (left.len() + right.len()) as f64;
    let mut df: BTreeMap<T, usize> = BTreeMap::new();
    for doc in left.iter().chain(right) {
        let mut seen: Vec<&T> = doc.iter().collect();
        seen.sort();
        seen.dedup();
        for t in seen {
            *df.entry(t.clone()).or_default() += 1;
        }
    }
    let idf = |t: &T| ((1.0 + n_docs) / (1.0 + df[t] as f64)).ln() + 1.0;
    let side = |docs: &[Vec<T>]| {
        let mut tf: BTreeMap<T, f64> = BTreeMap::new();
        for t in docs.iter().flatten() {
            *tf.entry(t.clone()).or_default() += 1.0;
        }
        for (t, v) in tf.iter_mut() {
            *v *= idf(t);
        }
        tf
    };
    (side(left), side(right))
}

/// Cosine of two sparse vectors; zero when either is all-zero.
pub fn cosine<T: Ord>(a: &BTreeMap<T, f64>, b: &BTreeMap<T, f64>) -> f64 {
    let norm = |v: &BTreeMap<T, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    if dot <= 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).min(1.0)
}

/// TF-IDF cosine similarity between two collections of tokenized documents.
pub fn tfidf_cosine<T: Ord + Clone>(current: &[Vec<T>], memory: &[Vec<T>]) -> f64 {
    let (a, b) = tfidf_vectors(current, memory);
    cosine(&a, &b)
}

/// `λ_ori` scaled by the TF-IDF cosine between the current task's documents
/// and the retained examples' documents.
pub fn similarity_lambda<T: Ord + Clone>(current: &[Vec<T>], memory: &[Vec<T>], lambda_ori: f64) -> Result<f64> {
    if !(lambda_ori >= 0.0) || !lambda_ori.is_finite() {
        return Err(Error::usage(format!("lambda_ori must be finite and >= 0, got {lambda_ori}")));
    }
    Ok(lambda_ori * tfidf_cosine(current, memory))
}
