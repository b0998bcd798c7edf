//! Experiment plumbing: configuration, datasets, synthetic suites, the
//! sequential runner and reports.

mod config;
mod dataset;
mod report;
mod runner;
mod synth;

pub use config::{ExperimentConfig, TaskSpec};
pub use dataset::{load_dataset, save_dataset, Record};
pub use report::{report, summarize, summary_csv, ReportStyle, SummaryRow};
pub use runner::{
    build_vocab, encode_records, evaluate, load_tasks, run_sequence, run_tasks, Evaluation, RunRecord, Sample,
    TaskSplits, TaskTiming,
};
pub use synth::{gen_synthetic_suite, write_suite, Lexicon, SynthParams, SynthTask, SyntheticSuite};
