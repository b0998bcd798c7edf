use std::collections::HashMap;

use crate::error::{Error, Result};

/// Zero clipped-match counts are replaced by this before taking logs.
pub const BLEU_SMOOTHING: f64 = 1e-9;
/// Recall weight of the LCS F-measure.
pub const ROUGE_L_BETA: f64 = 1.2;

pub(crate) fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with orders `1..=max_n`, uniform weights, and brevity penalty.
///
/// Clipped counts and candidate n-gram totals are pooled over the corpus.
/// An order with zero matches contributes a numerator of
/// [`BLEU_SMOOTHING`]. An order for which neither the candidates nor the
/// references contain any n-gram is left out of the geometric mean.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R], max_n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::usage(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if !(1..=4).contains(&max_n) {
        return Err(Error::usage(format!("BLEU order must be in 1..=4, got {max_n}")));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut ref_totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let c = words(c.as_ref());
        let r = words(r.as_ref());
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let cc = ngram_counts(&c, n);
            let rc = ngram_counts(&r, n);
            matches[n - 1] += cc
                .iter()
                .map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            totals[n - 1] += c.len().saturating_sub(n - 1);
            ref_totals[n - 1] += r.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(if ref_len == 0 { 1.0 } else { 0.0 });
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..max_n {
        if totals[n] == 0 && ref_totals[n] == 0 {
            continue;
        }
        let num = if matches[n] == 0 { BLEU_SMOOTHING } else { matches[n] as f64 };
        let den = totals[n].max(1) as f64;
        log_sum += (num / den).ln();
        orders += 1;
    }
    let precision = if orders == 0 { 1.0 } else { (log_sum / orders as f64).exp() };
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok((bp * precision).clamp(0.0, 1.0))
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1+β²)PR / (R + β²P)`.
pub fn rouge_l_beta(candidate: &str, reference: &str, beta: f64) -> f64 {
    let c = words(candidate);
    let r = words(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&c, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / c.len() as f64;
    let rec = lcs / r.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * rec / (rec + b2 * p)
}

/// Sentence ROUGE-L with β = [`ROUGE_L_BETA`].
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_beta(candidate, reference, ROUGE_L_BETA)
}

/// Exact-match METEOR without stemming or synonym tables.
///
/// Candidate tokens are aligned left to right to the first unused equal
/// reference token. `F_mean = 10PR / (R + 9P)` and the fragmentation penalty
/// is `0.5 · (chunks / matches)³`.
pub fn meteor_lite(candidate: &str, reference: &str) -> f64 {
    let c = words(candidate);
    let r = words(reference);
    let mut used = vec![false; r.len()];
    let mut alignment: Vec<usize> = Vec::new();
    for tok in &c {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *tok) {
            used[j] = true;
            alignment.push(j);
        }
    }
    let matches = alignment.len();
    if matches == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment.windows(2).filter(|w| w[1] != w[0] + 1).count();
    let p = matches as f64 / c.len() as f64;
    let rec = matches as f64 / r.len() as f64;
    let f_mean = 10.0 * p * rec / (rec + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// Mean of a sentence-level scorer over aligned pairs.
pub fn corpus_mean<S: AsRef<str>, R: AsRef<str>>(
    candidates: &[S],
    references: &[R],
    scorer: impl Fn(&str, &str) -> f64,
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::usage("candidate and reference counts differ"));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| scorer(c.as_ref(), r.as_ref()))
        .sum();
    Ok(total / candidates.len() as f64)
}
