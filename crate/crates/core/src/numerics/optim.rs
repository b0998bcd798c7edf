use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update. Moment buffers are sized lazily on the first call
    /// and must keep matching `params` afterwards.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.numel() != g.len() {
                return Err(Error::dim(format!(
                    "parameter of {} elements given a gradient of {}",
                    p.numel(),
                    g.len()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
        {
            return Err(Error::dim("optimizer state does not match parameters"));
        }

        self.t += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let w = &mut p.data_mut()[i];
                *w -= lr * weight_decay * *w;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.check_finite("adamw_step")?;
        }
        Ok(())
    }
}

/// Global L2 norm over a set of gradient buffers.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales every buffer by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm measured before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::usage(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Tensor> {
        vec![
            Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap(),
            Tensor::from_rows(&[vec![0.3, 0.4]]).unwrap(),
        ]
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = params();
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..5 {
            opt.step(&mut p, &[vec![0.0; 3], vec![0.0; 2]]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = params();
        let before = p.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = vec![vec![0.7, -3.0, 1e-3], vec![-0.2, 5.0]];
        AdamW::new(cfg).step(&mut p, &g).unwrap();
        for ((after, before), grad) in p.iter().zip(&before).zip(&g) {
            for (i, &g) in grad.iter().enumerate() {
                // closed form: m̂ = g, v̂ = g², Δ = -lr·g/(|g|+ε)
                let expect = -cfg.lr * g / (g.abs() + cfg.eps);
                let delta = after.data()[i] - before.data()[i];
                assert!((delta - expect).abs() < 1e-15, "{delta} vs {expect}");
                assert!((delta + cfg.lr * g.signum()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged_even_with_decay() {
        // decay is lr-scaled (decoupled), so lr = 0 isolates it to nothing.
        let mut p = params();
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.0,
            weight_decay: 0.5,
            ..Default::default()
        });
        opt.step(&mut p, &[vec![1.0; 3], vec![1.0; 2]]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn decay_only_shrinks_proportionally() {
        let mut p = params();
        let before = p.clone();
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        AdamW::new(cfg).step(&mut p, &[vec![0.0; 3], vec![0.0; 2]]).unwrap();
        for (a, b) in p.iter().zip(&before) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y * (1.0 - 0.05)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut p = params();
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(matches!(
            opt.step(&mut p, &[vec![0.0; 2], vec![0.0; 2]]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(opt.step(&mut p, &[vec![0.0; 3]]), Err(Error::Dimension(_))));
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut p = params();
        let mut opt = AdamW::new(AdamWConfig::default());
        for s in 0..20 {
            let g = vec![
                vec![(s as f64).sin(), -1.0, 2.0],
                vec![(s as f64 * 0.3).cos(), -0.5],
            ];
            opt.step(&mut p, &g).unwrap();
        }
        assert!(opt.second_moments().iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn clipping_examples() {
        // norm 2 under max 5
        let mut g = vec![vec![2.0, 0.0]];
        assert_eq!(clip_global_norm(&mut g, 5.0).unwrap(), 2.0);
        assert_eq!(g, vec![vec![2.0, 0.0]]);
        // norm 10 over max 5 halves everything
        let mut g = vec![vec![6.0], vec![8.0, 0.0]];
        assert_eq!(clip_global_norm(&mut g, 5.0).unwrap(), 10.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0, 0.0]]);
        assert!(matches!(clip_global_norm(&mut g, 0.0), Err(Error::Usage(_))));
        assert!(matches!(clip_global_norm(&mut g, -1.0), Err(Error::Usage(_))));
    }
}
