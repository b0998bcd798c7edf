//! Difficult-example replay and similarity-regularized EWC.
//!
//! After each task the `N` examples with the highest length-normalized loss
//! are retained. Later tasks train on their own data plus every retained
//! set, while an EWC penalty anchored at the previous task's weights holds
//! parameters that matter for the retained examples. The penalty weight is
//! `λ_ori` scaled by the TF-IDF cosine between the new data and the memory.

mod ewc;
mod memory;
mod selection;
mod similarity;
mod trainer;

pub use ewc::{add_ewc_gradient, ewc_penalty, fisher_diagonal, EwcAnchor};
pub use memory::{ExampleSet, ReplayMemory, ScoredExample};
pub use selection::{difficulty_score, score_all, select_difficult, select_random, top_n};
pub use similarity::{cosine, similarity_lambda, tfidf_cosine, tfidf_vectors};
pub use trainer::{replay_pool, train_task, Strategy, TaskData, TaskOutcome, TrainConfig, TrainLog};
