//! Encoder-decoder transformer with post-residual rescale-only norms,
//! a causal decoder with cross-attention, and a tied output projection.

pub mod checkpoint;
mod config;
mod transformer;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use transformer::{argmax, BatchLoss, ExampleLoss, ModelState};
