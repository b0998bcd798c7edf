use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ewc::{add_ewc_gradient, ewc_penalty, fisher_diagonal, EwcAnchor};
use super::memory::{ReplayMemory, ScoredExample};
use super::selection::{select_difficult, select_random};
use super::similarity::similarity_lambda;
use crate::encoding::EncodedExample;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::numerics::{clip_global_norm, AdamW, AdamWConfig};
use crate::rng;

/// Continual-learning strategy for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Difficult-example replay plus similarity-weighted EWC.
    #[serde(rename = "strider")]
    Strider,
    /// As `Strider` with a fixed EWC weight.
    #[serde(rename = "strider-st")]
    StriderFixedLambda,
    /// As `Strider` with uniformly random example selection.
    #[serde(rename = "strider-d")]
    StriderRandomSelection,
    /// EWC only; retained sets serve as Fisher probes and are never replayed.
    #[serde(rename = "strider-er")]
    StriderNoReplay,
    /// Plain sequential fine-tuning.
    #[serde(rename = "finetune")]
    Finetune,
    /// Replay of uniformly random examples, no regularizer.
    #[serde(rename = "random_replay")]
    RandomReplay,
    /// Retrain on the union of all datasets seen so far.
    #[serde(rename = "multitask")]
    Multitask,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Strider,
        Strategy::StriderFixedLambda,
        Strategy::StriderRandomSelection,
        Strategy::StriderNoReplay,
        Strategy::Finetune,
        Strategy::RandomReplay,
        Strategy::Multitask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Strider => "strider",
            Strategy::StriderFixedLambda => "strider-st",
            Strategy::StriderRandomSelection => "strider-d",
            Strategy::StriderNoReplay => "strider-er",
            Strategy::Finetune => "finetune",
            Strategy::RandomReplay => "random_replay",
            Strategy::Multitask => "multitask",
        }
    }

    pub fn replays(self) -> bool {
        matches!(
            self,
            Strategy::Strider | Strategy::StriderFixedLambda | Strategy::StriderRandomSelection | Strategy::RandomReplay
        )
    }

    pub fn uses_ewc(self) -> bool {
        matches!(
            self,
            Strategy::Strider | Strategy::StriderFixedLambda | Strategy::StriderRandomSelection | Strategy::StriderNoReplay
        )
    }

    pub fn adaptive_lambda(self) -> bool {
        self.uses_ewc() && self != Strategy::StriderFixedLambda
    }

    pub fn random_selection(self) -> bool {
        matches!(self, Strategy::StriderRandomSelection | Strategy::RandomReplay)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['−', '_'], "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().replace('_', "-") == key)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::usage(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Per-task training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Examples retained per task.
    pub replay_size: usize,
    pub lambda_ori: f64,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Multitask keeps the previous weights instead of starting over.
    pub warm_start_multitask: bool,
    /// Token ids left out of the similarity documents.
    pub similarity_ignore: Vec<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::Strider,
            replay_size: 64,
            lambda_ori: 120_000.0,
            optimizer: AdamWConfig::default(),
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            clip_norm: 1.0,
            seed: 0,
            warm_start_multitask: false,
            similarity_ignore: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replay_size == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::usage("replay_size, batch_size, max_epochs and patience must be positive"));
        }
        if !(self.lambda_ori >= 0.0) || !(self.clip_norm > 0.0) || !(self.optimizer.lr > 0.0) {
            return Err(Error::usage("lambda_ori must be >= 0; clip_norm and lr must be > 0"));
        }
        Ok(())
    }
}

/// One task's splits.
#[derive(Clone, Copy, Debug)]
pub struct TaskData<'a> {
    pub task_id: usize,
    pub train: &'a [EncodedExample],
    pub dev: &'a [EncodedExample],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub task_id: usize,
    pub pool_size: usize,
    pub lambda_eff: Option<f64>,
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    pub ewc_penalty: Vec<f64>,
    pub best_epoch: usize,
    pub steps: usize,
    /// Source indices of the examples retained from this task.
    pub selected: Vec<usize>,
    pub selected_scores: Vec<f64>,
}

pub struct TaskOutcome {
    pub anchor: Option<EwcAnchor>,
    pub log: TrainLog,
}

/// Assembles the training pool for task `task.task_id`.
pub fn replay_pool<'a>(
    current: &'a [EncodedExample],
    memory: &'a ReplayMemory,
    history: &[&'a [EncodedExample]],
    strategy: Strategy,
) -> Vec<&'a EncodedExample> {
    let mut pool: Vec<&EncodedExample> = Vec::new();
    if strategy == Strategy::Multitask {
        for past in history {
            pool.extend(past.iter());
        }
    }
    pool.extend(current.iter());
    if strategy.replays() {
        pool.extend(memory.examples());
    }
    pool
}

/// Trains on one task and updates memory, returning the anchor for the next task.
///
/// `history` holds the training splits of earlier tasks and is read only by
/// the multitask baseline. `optimizer` is replaced by a fresh one when the
/// multitask baseline restarts from new weights.
pub fn train_task(
    model: &mut ModelState,
    optimizer: &mut AdamW,
    task: TaskData<'_>,
    history: &[&[EncodedExample]],
    memory: &mut ReplayMemory,
    anchor: Option<EwcAnchor>,
    config: &TrainConfig,
) -> Result<TaskOutcome> {
    config.validate()?;
    if task.train.is_empty() || task.dev.is_empty() {
        return Err(Error::usage("train and dev splits must be non-empty"));
    }
    let strategy = config.strategy;

    if strategy == Strategy::Multitask && !config.warm_start_multitask && !history.is_empty() {
        *model = ModelState::new(model.config().clone(), model.seed())?;
        *optimizer = AdamW::new(optimizer.config);
    }

    let mut anchor = match anchor {
        Some(a) if strategy.uses_ewc() && !memory.is_empty() => {
            let lambda = if strategy.adaptive_lambda() {
                let ignore = &config.similarity_ignore;
                let strip = |ex: &EncodedExample| -> Vec<u32> {
                    ex.input_ids.iter().copied().filter(|t| !ignore.contains(t)).collect()
                };
                let current: Vec<Vec<u32>> = task.train.iter().map(strip).collect();
                let past: Vec<Vec<u32>> = memory.examples().map(strip).collect();
                similarity_lambda(&current, &past, config.lambda_ori)?
            } else {
                config.lambda_ori
            };
            Some(EwcAnchor { lambda_eff: lambda, ..a })
        }
        _ => None,
    };

    let pool = replay_pool(task.train, memory, history, strategy);
    let mut log = TrainLog {
        task_id: task.task_id,
        pool_size: pool.len(),
        lambda_eff: anchor.as_ref().map(|a| a.lambda_eff),
        ..Default::default()
    };

    let task_key = task.task_id as u64;
    let mut shuffle_rng = rng::stream(config.seed, &[rng::SHUFFLE, task_key]);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut best_dev = f64::INFINITY;
    let mut best_params = model.flatten();
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<EncodedExample> = chunk.iter().map(|&i| pool[i].clone()).collect();
            let dropout_seed = rng::derive_seed(config.seed, &[rng::DROPOUT, task_key, log.steps as u64]);
            let (loss, mut grads) = model.loss_and_grad(&batch, Some(dropout_seed))?;
            if let Some(a) = anchor.as_ref().filter(|a| a.lambda_eff > 0.0) {
                add_ewc_gradient(model.tensors(), a, &mut grads)?;
            }
            clip_global_norm(&mut grads, config.clip_norm)?;
            model.apply_update(optimizer, &grads)?;
            epoch_loss += loss.mean;
            batches += 1;
            log.steps += 1;
        }
        log.train_loss.push(epoch_loss / batches as f64);
        if let Some(a) = anchor.as_ref() {
            log.ewc_penalty.push(ewc_penalty(&model.flatten(), a)?);
        }

        let dev = model.loss(task.dev, None)?.mean;
        log.dev_loss.push(dev);
        if dev < best_dev {
            best_dev = dev;
            best_params = model.flatten();
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.load_flat(&best_params)?;

    let selected: Vec<ScoredExample> = if strategy.random_selection() {
        let mut r = rng::stream(config.seed, &[rng::SELECT, task_key]);
        select_random(task.train, model, config.replay_size, task.task_id, &mut r)?
    } else {
        select_difficult(task.train, model, config.replay_size, task.task_id)?
    };
    log.selected = selected.iter().map(|s| s.example.source_index).collect();
    log.selected_scores = selected.iter().map(|s| s.score).collect();
    memory.push(task.task_id, selected)?;

    anchor = if strategy.uses_ewc() {
        let fisher = fisher_diagonal(memory.examples(), model)?;
        Some(EwcAnchor::new(model.flatten(), fisher, 0.0)?)
    } else {
        None
    };

    Ok(TaskOutcome { anchor, log })
}
