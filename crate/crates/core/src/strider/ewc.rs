use serde::{Deserialize, Serialize};

use crate::encoding::EncodedExample;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::numerics::Tensor;

/// Anchor point and per-parameter importance for the EWC penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EwcAnchor {
    /// Flattened parameters at the end of the previous task.
    pub anchor_params: Vec<f64>,
    /// Diagonal Fisher estimate aligned with `anchor_params`.
    pub fisher: Vec<f64>,
    /// Penalty weight in effect for the current task.
    pub lambda_eff: f64,
}

impl EwcAnchor {
    pub fn new(anchor_params: Vec<f64>, fisher: Vec<f64>, lambda_eff: f64) -> Result<Self> {
        if anchor_params.len() != fisher.len() {
            return Err(Error::dim(format!(
                "anchor has {} entries, fisher {}",
                anchor_params.len(),
                fisher.len()
            )));
        }
        if fisher.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::validation("fisher-nonnegative", "fisher entries must be finite and >= 0"));
        }
        if !(lambda_eff >= 0.0) || !lambda_eff.is_finite() {
            return Err(Error::validation("lambda-nonnegative", format!("lambda {lambda_eff}")));
        }
        Ok(EwcAnchor {
            anchor_params,
            fisher,
            lambda_eff,
        })
    }

    pub fn len(&self) -> usize {
        self.fisher.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fisher.is_empty()
    }
}

/// Empirical diagonal Fisher: the mean over `examples` of the squared
/// gradient of each example's length-normalized cross-entropy (eval mode).
pub fn fisher_diagonal<'e, I>(examples: I, model: &ModelState) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'e EncodedExample>,
{
    let mut fisher = vec![0.0; model.num_parameters()];
    let mut count = 0usize;
    let mut grads = model.zero_grads();
    for ex in examples {
        let len = ex.target_len();
        if len == 0 {
            return Err(Error::validation("target-nonempty", "fisher on an empty target"));
        }
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        model.accumulate_example_grad(ex, 1.0 / len as f64, None, &mut grads)?;
        for (f, g) in fisher.iter_mut().zip(grads.iter().flatten()) {
            *f += g * g;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::usage("fisher of an empty example set"));
    }
    let inv = 1.0 / count as f64;
    fisher.iter_mut().for_each(|f| *f *= inv);
    Ok(fisher)
}

/// `λ · Σ F_i (θ_i − θ*_i)²` over flattened parameters.
pub fn ewc_penalty(params: &[f64], anchor: &EwcAnchor) -> Result<f64> {
    if params.len() != anchor.len() {
        return Err(Error::dim(format!(
            "{} parameters against an anchor of {}",
            params.len(),
            anchor.len()
        )));
    }
    let s: f64 = params
        .iter()
        .zip(&anchor.anchor_params)
        .zip(&anchor.fisher)
        .map(|((p, a), f)| {
            let d = p - a;
            f * d * d
        })
        .sum();
    Ok(anchor.lambda_eff * s)
}

/// Adds `2 λ F_i (θ_i − θ*_i)` into per-tensor gradient buffers laid out like `tensors`.
pub fn add_ewc_gradient(tensors: &[Tensor], anchor: &EwcAnchor, grads: &mut [Vec<f64>]) -> Result<()> {
    let total: usize = tensors.iter().map(Tensor::numel).sum();
    if total != anchor.len() || grads.len() != tensors.len() {
        return Err(Error::dim("EWC anchor does not align with the parameters"));
    }
    let two_lambda = 2.0 * anchor.lambda_eff;
    let mut at = 0;
    for (t, g) in tensors.iter().zip(grads.iter_mut()) {
        let n = t.numel();
        if g.len() != n {
            return Err(Error::dim("gradient buffer does not match its parameter"));
        }
        let a = &anchor.anchor_params[at..at + n];
        let f = &anchor.fisher[at..at + n];
        for i in 0..n {
            g[i] += two_lambda * f[i] * (t.data()[i] - a[i]);
        }
        at += n;
    }
    Ok(())
}
