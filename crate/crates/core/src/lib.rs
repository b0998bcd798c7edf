//! Lifelong question generation across answer formats.
//!
//! A small encoder-decoder transformer learns to generate questions from a
//! unified `answer: … passage: … distractor: …` encoding while datasets
//! arrive one after another. Forgetting is countered by replaying the most
//! difficult retained examples of earlier tasks and by an EWC penalty whose
//! weight follows the TF-IDF similarity between the new data and memory.

// `!(x > 0.0)` is how validation rejects NaN alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod strider;

pub use encoding::{EncodedExample, Format, QgInstance, Vocab};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, RunRecord, TaskSpec};
pub use metrics::MetricMatrix;
pub use model::{ModelConfig, ModelState};
pub use numerics::{AdamW, AdamWConfig, Tape, Tensor, Var};
pub use strider::{EwcAnchor, ReplayMemory, ScoredExample, Strategy, TrainConfig};
