use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::{load_dataset, Record};
use super::synth::gen_synthetic_suite;
use crate::encoding::{encode, normalize, template_token_ids, EncodedExample, TruncationStats, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{score_corpus, MetricMatrix, METRIC_NAMES};
use crate::model::{checkpoint, ModelConfig, ModelState};
use crate::numerics::AdamW;
use crate::strider::{train_task, EwcAnchor, ReplayMemory, Strategy, TaskData, TrainLog};

/// One task's raw splits.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSplits {
    pub name: String,
    pub train: Vec<Record>,
    pub dev: Vec<Record>,
    pub test: Vec<Record>,
}

impl TaskSplits {
    fn from_instances(name: String, splits: [Vec<crate::encoding::QgInstance>; 3]) -> Self {
        let [train, dev, test] = splits.map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, instance)| Record {
                    source_index: i + 1,
                    instance,
                })
                .collect()
        });
        TaskSplits { name, train, dev, test }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub train_secs: f64,
    pub eval_secs: f64,
}

/// A greedy generation kept for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub task: usize,
    pub reference: String,
    pub generated: String,
}

/// Everything a run produces besides checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub task_names: Vec<String>,
    /// One matrix per entry of [`METRIC_NAMES`], in that order.
    pub metrics: Vec<MetricMatrix>,
    pub logs: Vec<TrainLog>,
    pub timings: Vec<TaskTiming>,
    pub truncation: TruncationStats,
    pub vocab_size: usize,
    pub num_parameters: usize,
    pub memory_size: usize,
    /// The final model's first few test generations per task.
    pub samples: Vec<Sample>,
}

impl RunRecord {
    pub fn metric(&self, name: &str) -> Option<&MetricMatrix> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Scores and generations for one evaluation split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: [f64; 6],
    pub candidates: Vec<String>,
    pub references: Vec<String>,
}

/// Greedy-decodes every example and scores against its normalized question.
pub fn evaluate(
    model: &ModelState,
    vocab: &Vocab,
    examples: &[EncodedExample],
    references: &[String],
    max_len: usize,
) -> Result<Evaluation> {
    if examples.len() != references.len() {
        return Err(Error::usage("examples and references differ in count"));
    }
    let mut candidates = Vec::with_capacity(examples.len());
    for ex in examples {
        let ids = model.generate(&ex.input_ids, max_len)?;
        candidates.push(vocab.detokenize(&ids)?);
    }
    let scores = score_corpus(&candidates, references)?;
    Ok(Evaluation {
        scores,
        candidates,
        references: references.to_vec(),
    })
}

/// Encodes records and returns them with their normalized references.
pub fn encode_records(
    records: &[Record],
    vocab: &Vocab,
    max_input_len: usize,
    stats: &mut TruncationStats,
) -> Result<(Vec<EncodedExample>, Vec<String>)> {
    let mut examples = Vec::with_capacity(records.len());
    let mut refs = Vec::with_capacity(records.len());
    for r in records {
        examples.push(encode(&r.instance, vocab, max_input_len, r.source_index, stats)?);
        refs.push(normalize(&r.instance.question));
    }
    Ok((examples, refs))
}

/// Reads or generates the task sequence named by the config.
pub fn load_tasks(config: &ExperimentConfig) -> Result<Vec<TaskSplits>> {
    if let Some(params) = &config.synthetic {
        let suite = gen_synthetic_suite(params, config.seed)?;
        return Ok(suite
            .tasks
            .into_iter()
            .map(|t| TaskSplits::from_instances(t.name, [t.train, t.dev, t.test]))
            .collect());
    }
    config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let load = |p: &PathBuf| load_dataset(p, spec.max_examples);
            let wrap = |e| Error::Task {
                task: i + 1,
                source: Box::new(e),
            };
            Ok(TaskSplits {
                name: spec.name.clone(),
                train: load(&spec.train).map_err(wrap)?,
                dev: load(&spec.dev).map_err(wrap)?,
                test: load(&spec.test).map_err(wrap)?,
            })
        })
        .collect()
}

/// Builds the shared vocabulary from every task's training inputs and questions.
pub fn build_vocab(tasks: &[TaskSplits], config: &ExperimentConfig) -> Result<Vocab> {
    let mut corpus = Vec::new();
    for t in tasks {
        for r in &t.train {
            corpus.push(r.instance.unify()?);
            corpus.push(r.instance.question.clone());
        }
    }
    Vocab::build(corpus, config.vocab_min_count, config.vocab_max_size)
}

/// Loads the tasks the config names and runs the sequence.
pub fn run_sequence(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunRecord> {
    config.validate()?;
    let tasks = load_tasks(config)?;
    run_tasks(config, &tasks, out)
}

const SAMPLES_PER_TASK: usize = 3;

/// Trains through `tasks` in order, evaluating every seen task after each one.
///
/// With `out` set, writes `vocab.txt`, `config.json`, one checkpoint per task
/// under `checkpoints/`, `memory.jsonl`, and `record.json`.
pub fn run_tasks(config: &ExperimentConfig, tasks: &[TaskSplits], out: Option<&Path>) -> Result<RunRecord> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::usage("no tasks to run"));
    }
    let vocab = build_vocab(tasks, config)?;
    let mut truncation = TruncationStats::default();
    let mut encoded = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let wrap = |e| Error::Task {
            task: i + 1,
            source: Box::new(e),
        };
        let (train, _) = encode_records(&t.train, &vocab, config.max_input_len, &mut truncation).map_err(wrap)?;
        let (dev, _) = encode_records(&t.dev, &vocab, config.max_input_len, &mut truncation).map_err(wrap)?;
        let (test, refs) = encode_records(&t.test, &vocab, config.max_input_len, &mut truncation).map_err(wrap)?;
        if dev.is_empty() || test.is_empty() {
            return Err(wrap(Error::usage("dev and test splits must be non-empty")));
        }
        encoded.push((train, dev, test, refs));
    }

    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        ..config.model.clone()
    };
    let mut model = ModelState::new(model_config, config.seed)?;
    let train_config = config.train_config(template_token_ids(&vocab));
    let mut memory = ReplayMemory::new(config.replay_size)?;
    let mut anchor: Option<EwcAnchor> = None;

    if let Some(dir) = out {
        fs::create_dir_all(dir.join("checkpoints"))?;
        vocab.save(&dir.join("vocab.txt"))?;
        config.save(&dir.join("config.json"))?;
    }

    let n = tasks.len();
    let mut metrics: Vec<MetricMatrix> = METRIC_NAMES.iter().map(|m| MetricMatrix::new(*m, n)).collect();
    let mut logs = Vec::with_capacity(n);
    let mut timings = Vec::with_capacity(n);
    let mut samples = Vec::new();

    for i in 1..=n {
        let wrap = |e| Error::Task {
            task: i,
            source: Box::new(e),
        };
        let (train, dev, _, _) = &encoded[i - 1];
        let history: Vec<&[EncodedExample]> = encoded[..i - 1].iter().map(|e| e.0.as_slice()).collect();
        let mut optimizer = AdamW::new(train_config.optimizer);
        let started = Instant::now();
        let outcome = train_task(
            &mut model,
            &mut optimizer,
            TaskData { task_id: i, train, dev },
            &history,
            &mut memory,
            anchor.take(),
            &train_config,
        )
        .map_err(wrap)?;
        let train_secs = started.elapsed().as_secs_f64();
        anchor = outcome.anchor;
        logs.push(outcome.log);

        let started = Instant::now();
        for t in 1..=i {
            let (_, _, test, refs) = &encoded[t - 1];
            let eval = evaluate(&model, &vocab, test, refs, config.eval_max_len).map_err(wrap)?;
            for (m, v) in metrics.iter_mut().zip(eval.scores) {
                m.set(t, i, v)?;
            }
            if i == n {
                for (c, r) in eval.candidates.iter().zip(&eval.references).take(SAMPLES_PER_TASK) {
                    samples.push(Sample {
                        task: t,
                        reference: r.clone(),
                        generated: c.clone(),
                    });
                }
            }
        }
        timings.push(TaskTiming {
            train_secs,
            eval_secs: started.elapsed().as_secs_f64(),
        });

        if let Some(dir) = out {
            checkpoint::save(&dir.join("checkpoints").join(format!("task{i}.ckpt")), &model, anchor.as_ref())?;
        }
    }

    let record = RunRecord {
        strategy: config.strategy,
        seed: config.seed,
        task_names: tasks.iter().map(|t| t.name.clone()).collect(),
        metrics,
        logs,
        timings,
        truncation,
        vocab_size: vocab.len(),
        num_parameters: model.num_parameters(),
        memory_size: memory.len(),
        samples,
    };
    if let Some(dir) = out {
        memory.save_jsonl(&dir.join("memory.jsonl"))?;
        record.save(&dir.join("record.json"))?;
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::SynthParams;

    pub(crate) fn tiny_config(strategy: Strategy) -> ExperimentConfig {
        ExperimentConfig {
            synthetic: Some(SynthParams {
                num_tasks: 2,
                overlaps: vec![0.5],
                train_size: 12,
                dev_size: 4,
                test_size: 4,
                ..Default::default()
            }),
            strategy,
            replay_size: 3,
            batch_size: 4,
            max_epochs: 2,
            patience: 1,
            lr: 1e-3,
            eval_max_len: 8,
            max_input_len: 64,
            model: ModelConfig {
                d_model: 8,
                n_heads: 2,
                d_ff: 16,
                n_encoder_layers: 1,
                n_decoder_layers: 1,
                max_positions: 64,
                ..Default::default()
            },
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn fills_triangle_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(Strategy::Strider);
        let rec = run_sequence(&cfg, Some(dir.path())).unwrap();
        assert_eq!(rec.metrics.len(), 6);
        assert!(rec.metrics.iter().all(MetricMatrix::is_complete));
        assert_eq!(rec.logs.len(), 2);
        assert_eq!(rec.logs[1].pool_size, 12 + 3);
        assert_eq!(rec.memory_size, 6);
        for f in ["vocab.txt", "config.json", "memory.jsonl", "record.json", "checkpoints/task2.ckpt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(RunRecord::load(&dir.path().join("record.json")).unwrap(), rec);
    }

    #[test]
    fn missing_split_names_the_task() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            tasks: vec![super::super::TaskSpec {
                name: "a".into(),
                format: None,
                train: dir.path().join("none.train"),
                dev: dir.path().join("none.dev"),
                test: dir.path().join("none.test"),
                max_examples: None,
            }],
            ..tiny_config(Strategy::Finetune)
        };
        let cfg = ExperimentConfig { synthetic: None, ..cfg };
        assert!(matches!(run_sequence(&cfg, None), Err(Error::Task { task: 1, .. })));
    }
}
