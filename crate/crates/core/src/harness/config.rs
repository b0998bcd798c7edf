use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthParams;
use crate::encoding::{Format, DEFAULT_MAX_INPUT_LEN};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::AdamWConfig;
use crate::strider::{Strategy, TrainConfig};

/// One dataset in the task sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Dominant input format, if the dataset has one.
    #[serde(default)]
    pub format: Option<Format>,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    /// Optional cap applied to every split.
    #[serde(default)]
    pub max_examples: Option<usize>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train == self.dev || self.train == self.test || self.dev == self.test {
            return Err(Error::validation(
                "splits-disjoint",
                format!("task {} reuses a file across splits", self.name),
            ));
        }
        Ok(())
    }

    /// Resolves relative split paths against `base`.
    pub fn rebased(&self, base: &Path) -> TaskSpec {
        let fix = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        TaskSpec {
            train: fix(&self.train),
            dev: fix(&self.dev),
            test: fix(&self.test),
            ..self.clone()
        }
    }
}

/// Everything a run needs. Serialized as the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Datasets on disk, in arrival order.
    pub tasks: Vec<TaskSpec>,
    /// Generate the task sequence instead of reading `tasks`.
    pub synthetic: Option<SynthParams>,
    pub strategy: Strategy,
    pub replay_size: usize,
    pub lambda_ori: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub max_input_len: usize,
    pub vocab_max_size: usize,
    pub vocab_min_count: usize,
    /// Greedy decoding limit during evaluation.
    pub eval_max_len: usize,
    pub model: ModelConfig,
    pub seed: u64,
    pub warm_start_multitask: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tasks: Vec::new(),
            synthetic: None,
            strategy: Strategy::Strider,
            replay_size: 64,
            lambda_ori: 120_000.0,
            lr: 3e-4,
            weight_decay: 0.01,
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            clip_norm: 1.0,
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            vocab_max_size: 2000,
            vocab_min_count: 1,
            eval_max_len: 32,
            model: ModelConfig::default(),
            seed: 0,
            warm_start_multitask: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(ExperimentConfig {
            tasks: cfg.tasks.iter().map(|t| t.rebased(base)).collect(),
            ..cfg
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        match &self.synthetic {
            Some(s) => s.num_tasks,
            None => self.tasks.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks() == 0 {
            return Err(Error::usage("an experiment needs at least one task"));
        }
        for t in &self.tasks {
            t.validate()?;
        }
        let positive = [
            self.replay_size,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.max_input_len,
            self.vocab_max_size,
            self.eval_max_len,
        ];
        if positive.contains(&0) || !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(self.lambda_ori >= 0.0) {
            return Err(Error::usage("numeric hyperparameters must be positive"));
        }
        if self.max_input_len > self.model.max_positions {
            return Err(Error::usage(format!(
                "max_input_len {} exceeds the model's {} positions",
                self.max_input_len, self.model.max_positions
            )));
        }
        Ok(())
    }

    pub fn train_config(&self, similarity_ignore: Vec<u32>) -> TrainConfig {
        TrainConfig {
            strategy: self.strategy,
            replay_size: self.replay_size,
            lambda_ori: self.lambda_ori,
            optimizer: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            clip_norm: self.clip_norm,
            seed: self.seed,
            warm_start_multitask: self.warm_start_multitask,
            similarity_ignore,
        }
    }
}
