use rand::seq::index;
use rand::Rng;

use super::memory::ScoredExample;
use crate::encoding::EncodedExample;
use crate::error::{Error, Result};
use crate::model::ModelState;

/// Length-normalized target cross-entropy under `model` in eval mode.
pub fn difficulty_score(example: &EncodedExample, model: &ModelState) -> Result<f64> {
    if example.target_len() == 0 {
        return Err(Error::validation("target-nonempty", "difficulty of an empty target"));
    }
    Ok(model.example_loss(example, None)?.per_token())
}

/// Scores every example of a task.
pub fn score_all(dataset: &[EncodedExample], model: &ModelState, task_id: usize) -> Result<Vec<ScoredExample>> {
    dataset
        .iter()
        .map(|ex| {
            Ok(ScoredExample {
                task_id,
                score: difficulty_score(ex, model)?,
                example: ex.clone(),
            })
        })
        .collect()
}

/// The `n` highest scores, best first; equal scores go to the lower source index.
pub fn top_n(mut scored: Vec<ScoredExample>, n: usize) -> Vec<ScoredExample> {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.example.source_index.cmp(&b.example.source_index))
    });
    scored.truncate(n);
    scored
}

/// Keeps the `n` most difficult examples of a task.
pub fn select_difficult(
    dataset: &[EncodedExample],
    model: &ModelState,
    n: usize,
    task_id: usize,
) -> Result<Vec<ScoredExample>> {
    check_selection(dataset, n)?;
    Ok(top_n(score_all(dataset, model, task_id)?, n))
}

/// Keeps `n` examples drawn uniformly without replacement, ordered by source index.
pub fn select_random<R: Rng + ?Sized>(
    dataset: &[EncodedExample],
    model: &ModelState,
    n: usize,
    task_id: usize,
    rng: &mut R,
) -> Result<Vec<ScoredExample>> {
    check_selection(dataset, n)?;
    let mut picked: Vec<usize> = if n >= dataset.len() {
        (0..dataset.len()).collect()
    } else {
        index::sample(rng, dataset.len(), n).into_vec()
    };
    picked.sort_unstable_by_key(|&i| dataset[i].source_index);
    picked
        .into_iter()
        .map(|i| {
            Ok(ScoredExample {
                task_id,
                score: difficulty_score(&dataset[i], model)?,
                example: dataset[i].clone(),
            })
        })
        .collect()
}

fn check_selection(dataset: &[EncodedExample], n: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::usage("cannot select from an empty dataset"));
    }
    if n == 0 {
        return Err(Error::usage("selection size N must be at least 1"));
    }
    Ok(())
}
