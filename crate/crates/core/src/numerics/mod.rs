//! Dense `f64` tensors, a reverse-mode gradient tape, and AdamW.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, global_norm, AdamW, AdamWConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Central finite-difference derivative of `f` at every coordinate of `x`.
///
/// Used by gradient checks; `f` is evaluated `2 * x.len()` times.
pub fn finite_difference<F>(x: &[f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error with a floor on the denominator, so that near-zero
/// gradients are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
