//! Fixtures shared by the kernel benchmarks.

use lifelong_qg::numerics::Tensor;
use lifelong_qg::{EncodedExample, ModelConfig, ModelState};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).expect("finite data")
}

/// The small model used by the training-cost benchmarks.
pub fn small_model(vocab_size: usize) -> ModelState {
    let config = ModelConfig {
        vocab_size,
        d_model: 32,
        n_heads: 4,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        d_ff: 64,
        max_positions: 64,
        ..ModelConfig::default()
    };
    ModelState::new(config, 0).expect("valid config")
}

pub fn random_batch(n: usize, input_len: usize, target_len: usize, vocab_size: usize, seed: u64) -> Vec<EncodedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = lifelong_qg::encoding::NUM_SPECIALS as u32;
    (0..n)
        .map(|i| {
            let mut target: Vec<u32> = (0..target_len - 1)
                .map(|_| rng.random_range(lo..vocab_size as u32))
                .collect();
            target.push(lifelong_qg::encoding::EOS);
            EncodedExample {
                input_ids: (0..input_len).map(|_| rng.random_range(lo..vocab_size as u32)).collect(),
                target_ids: target,
                source_index: i,
            }
        })
        .collect()
}
