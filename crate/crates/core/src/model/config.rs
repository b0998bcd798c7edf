use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the encoder-decoder model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
    /// Learned absolute position embeddings; off makes the encoder
    /// permutation-equivariant.
    pub use_positions: bool,
    pub init_std: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2000,
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_ff: 128,
            dropout_rate: 0.1,
            max_positions: 512,
            use_positions: true,
            init_std: 0.02,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation("model-sizes-positive", format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::validation(
                "heads-divide-d-model",
                format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("dropout-rate-range", format!("dropout {}", self.dropout_rate)));
        }
        if !(self.init_std > 0.0) || !(self.norm_eps >= 0.0) {
            return Err(Error::validation("init-and-eps", "init_std must be > 0 and norm_eps >= 0"));
        }
        Ok(())
    }
}
