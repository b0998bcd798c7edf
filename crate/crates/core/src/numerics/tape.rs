//! Reverse-mode differentiation over 2-D tensor operations.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass that
//! visits each node once.

use std::borrow::Cow;

use rand::Rng;

use super::tensor::{axis_split, dot, gemm_nn, gemm_nt, gemm_tn, softmax_strided, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sum(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    /// Set on leaves that track a gradient.
    tracked: bool,
    param: Option<usize>,
}

/// Records operations for one forward pass.
///
/// Parameter leaves borrow their tensors so a forward pass never copies
/// model weights.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Gradient for a tracked leaf; zero-filled when the leaf did not reach the root.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.by_node[var.0] {
            Some(g) => Tensor::from_parts_unchecked(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// Moves parameter gradients into `out[param_index]`, adding to what is
    /// already there. Parameters absent from the graph are left untouched.
    pub fn accumulate_params(&mut self, out: &mut [Vec<f64>]) {
        for &(slot, var) in &self.params {
            if let Some(g) = self.by_node[var.0].take() {
                let dst = &mut out[slot];
                if dst.is_empty() {
                    *dst = g;
                } else {
                    for (d, v) in dst.iter_mut().zip(&g) {
                        *d += v;
                    }
                }
            }
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records an owned leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad();
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            tracked,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            tracked: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed model parameter whose gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            tracked: true,
            param: Some(slot),
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            tracked: false,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{name}: shapes {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts_unchecked(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), data);
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), data);
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let out = Tensor::from_parts_unchecked(vec![c, r], data);
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions disagree: {m}x{k} by {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::from_parts_unchecked(vec![m, n], out);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Matrix product `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul_t inner dimensions disagree: {m}x{k} by ({n}x{k2})^T"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::from_parts_unchecked(vec![m, n], out);
        self.push(out, Op::MatMulT(a, b), "matmul_t")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        let mut data = t.data().to_vec();
        softmax_strided(&mut data, outer, len, inner);
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), data);
        self.push(out, Op::Softmax { x, axis }, "softmax")
    }

    /// Rescale-only layer norm: `gain ⊙ x / sqrt(mean(x²) + eps)` per row.
    /// A row whose mean square is exactly zero (with `eps == 0`) maps to zeros.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let cols = *t.shape().last().ok_or_else(|| Error::dim("rms_norm on a scalar"))?;
        let g = self.value(gain);
        if g.numel() != cols {
            return Err(Error::dim(format!(
                "rms_norm gain has {} entries, rows have {cols}",
                g.numel()
            )));
        }
        let rows = t.numel() / cols.max(1);
        let mut inv_rms = Vec::with_capacity(rows);
        let mut data = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let ms = dot(row, row) / cols as f64 + eps;
            let inv = if ms > 0.0 { 1.0 / ms.sqrt() } else { 0.0 };
            inv_rms.push(inv);
            for c in 0..cols {
                data[r * cols + c] = g.data()[c] * row[c] * inv;
            }
        }
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), data);
        self.push(out, Op::RmsNorm { x, gain, inv_rms }, "rms_norm")
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims2()?;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!("row {id} of a {rows}-row table")));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts_unchecked(vec![ids.len(), cols], data);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            "gather",
        )
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::usage(format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.apply_mask(x, mask)
    }

    /// Multiplies `x` elementwise by a constant mask.
    pub fn apply_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::dim("mask length differs from tensor size"));
        }
        let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), data);
        self.push(out, Op::Mask { x, mask }, "dropout")
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is Tq×d, `k` and `v` are Tk×d; heads split `d` into contiguous
    /// column blocks. With `causal`, query `i` sees keys `0..=i` only.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (tq, d) = self.value(q).dims2()?;
        let (tk, dk) = self.value(k).dims2()?;
        let (tv, dv) = self.value(v).dims2()?;
        if dk != d || dv != d || tv != tk {
            return Err(Error::dim(format!(
                "attention shapes q {tq}x{d}, k {tk}x{dk}, v {tv}x{dv}"
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::dim(format!("{d} columns do not split into {heads} heads")));
        }
        if causal && tq != tk {
            return Err(Error::dim("causal attention needs equal query and key lengths"));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let visible = if causal { i + 1 } else { tk };
                let p = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let qi = &qd[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..visible {
                    let s = scale * dot(qi, &kd[j * d + off..j * d + off + dh]);
                    p[j] = s;
                    max = max.max(s);
                }
                let mut total = 0.0;
                for pj in p.iter_mut().take(visible) {
                    *pj = (*pj - max).exp();
                    total += *pj;
                }
                let o = &mut out[i * d + off..i * d + off + dh];
                for j in 0..visible {
                    p[j] /= total;
                    let w = p[j];
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (oc, &vc) in o.iter_mut().zip(vj) {
                        *oc += w * vc;
                    }
                }
            }
        }
        let out = Tensor::from_parts_unchecked(vec![tq, d], out);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
                probs,
            },
            "attention",
        )
    }

    /// Summed token cross-entropy of `logits` (T×V) against `targets`,
    /// skipping positions whose target equals `pad_id`.
    ///
    /// Returns the scalar total and the per-position losses (zero at pads).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], pad_id: u32) -> Result<(Var, Vec<f64>)> {
        let t = self.value(logits);
        let (rows, vocab) = t.dims2()?;
        if rows != targets.len() {
            return Err(Error::dim(format!(
                "{rows} logit rows for {} targets",
                targets.len()
            )));
        }
        let mut probs = t.data().to_vec();
        softmax_strided(&mut probs, rows, vocab, 1);
        let mut per_position = vec![0.0; rows];
        let mut kept = Vec::with_capacity(rows);
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if target == pad_id {
                kept.push(None);
                continue;
            }
            let target = target as usize;
            if target >= vocab {
                return Err(Error::Index(format!(
                    "target id {target} outside vocabulary of {vocab}"
                )));
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let loss = lse - row[target];
            per_position[r] = loss;
            total += loss;
            kept.push(Some(target));
        }
        let var = self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: kept,
                probs,
            },
            "cross_entropy",
        )?;
        Ok((var, per_position))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    self.acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.acc(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    self.acc(&mut grads, *a, &ga);
                    self.acc(&mut grads, *b, &gb);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * f).collect();
                    self.acc(&mut grads, *a, &ga);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (_, nn) = self.value(*b).dims2()?;
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * k];
                        gemm_nt(&g, self.value(*b).data(), &mut ga, m, nn, k);
                        self.acc(&mut grads, *a, &ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; k * nn];
                        gemm_tn(self.value(*a).data(), &g, &mut gb, m, k, nn);
                        self.acc(&mut grads, *b, &gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (nn, _) = self.value(*b).dims2()?;
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * k];
                        gemm_nn(&g, self.value(*b).data(), &mut ga, m, nn, k);
                        self.acc(&mut grads, *a, &ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; nn * k];
                        gemm_tn(&g, self.value(*a).data(), &mut gb, m, nn, k);
                        self.acc(&mut grads, *b, &gb);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = self.value(*a).dims2()?;
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    self.acc(&mut grads, *a, &ga);
                }
                Op::Relu(a) => {
                    let va = self.value(*a).data();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(va)
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.acc(&mut grads, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).numel()];
                    self.acc(&mut grads, *a, &ga);
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis)?;
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut s = 0.0;
                            for j in 0..len {
                                s += g[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..len {
                                let at = base + j * inner;
                                gx[at] = y[at] * (g[at] - s);
                            }
                        }
                    }
                    self.acc(&mut grads, *x, &gx);
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain).data();
                    let cols = gv.len();
                    let mut gx = vec![0.0; xv.numel()];
                    let mut gg = vec![0.0; cols];
                    for (r, &inv) in inv_rms.iter().enumerate() {
                        let row = xv.row(r);
                        let dy = &g[r * cols..(r + 1) * cols];
                        let mut s = 0.0;
                        for c in 0..cols {
                            gg[c] += dy[c] * row[c] * inv;
                            s += gv[c] * dy[c] * row[c];
                        }
                        let coef = s * inv * inv * inv / cols as f64;
                        for c in 0..cols {
                            gx[r * cols + c] = gv[c] * dy[c] * inv - row[c] * coef;
                        }
                    }
                    self.acc(&mut grads, *x, &gx);
                    self.acc(&mut grads, *gain, &gg);
                }
                Op::Gather { table, ids } => {
                    if self.needs(*table) {
                        let t = self.value(*table);
                        let (_, cols) = t.dims2()?;
                        let mut gt = vec![0.0; t.numel()];
                        for (r, &id) in ids.iter().enumerate() {
                            let dst = &mut gt[id * cols..(id + 1) * cols];
                            for (d, v) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                                *d += v;
                            }
                        }
                        self.acc(&mut grads, *table, &gt);
                    }
                }
                Op::Mask { x, mask } => {
                    let gx: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                    self.acc(&mut grads, *x, &gx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    causal,
                    probs,
                } => {
                    let (gq, gk, gv) = self.attention_backward(*q, *k, *v, *heads, *causal, probs, &g)?;
                    self.acc(&mut grads, *q, &gq);
                    self.acc(&mut grads, *k, &gk);
                    self.acc(&mut grads, *v, &gv);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let vocab = self.value(*logits).dims2()?.1;
                    let mut gl = vec![0.0; probs.len()];
                    for (r, target) in targets.iter().enumerate() {
                        if let Some(t) = target {
                            let src = &probs[r * vocab..(r + 1) * vocab];
                            let dst = &mut gl[r * vocab..(r + 1) * vocab];
                            for (d, p) in dst.iter_mut().zip(src) {
                                *d = p * g[0];
                            }
                            dst[*t] -= g[0];
                        }
                    }
                    self.acc(&mut grads, *logits, &gl);
                }
            }
        }

        let mut by_node: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        let mut shapes = Vec::with_capacity(self.nodes.len());
        let mut params = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            let g = if idx < n && node.tracked {
                grads.get_mut(idx).and_then(Option::take)
            } else {
                None
            };
            by_node.push(g);
            shapes.push(node.value.shape().to_vec());
            if let Some(slot) = node.param {
                params.push((slot, Var(idx)));
            }
        }
        Ok(Gradients {
            by_node,
            shapes,
            params,
        })
    }

    /// Whether gradient flow into `v` can reach a tracked leaf.
    fn needs(&self, v: Var) -> bool {
        let node = &self.nodes[v.0];
        !matches!(node.op, Op::Leaf) || node.tracked
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(g) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: &[f64],
        g: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (tq, d) = self.value(q).dims2()?;
        let (tk, _) = self.value(k).dims2()?;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut gq = vec![0.0; tq * d];
        let mut gk = vec![0.0; tk * d];
        let mut gv = vec![0.0; tk * d];
        let mut dp = vec![0.0; tk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let visible = if causal { i + 1 } else { tk };
                let p = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let go = &g[i * d + off..i * d + off + dh];
                let mut s = 0.0;
                for j in 0..visible {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    dp[j] = dot(go, vj);
                    s += dp[j] * p[j];
                    let gvj = &mut gv[j * d + off..j * d + off + dh];
                    for (a, &b) in gvj.iter_mut().zip(go) {
                        *a += p[j] * b;
                    }
                }
                let qi = &qd[i * d + off..i * d + off + dh];
                for j in 0..visible {
                    let ds = p[j] * (dp[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &kd[j * d + off..j * d + off + dh];
                    let gqi = &mut gq[i * d + off..i * d + off + dh];
                    for (a, &b) in gqi.iter_mut().zip(kj) {
                        *a += ds * b;
                    }
                    let gkj = &mut gk[j * d + off..j * d + off + dh];
                    for (a, &b) in gkj.iter_mut().zip(qi) {
                        *a += ds * b;
                    }
                }
            }
        }
        Ok((gq, gk, gv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]).with_grad());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0; 6]);
    }

    #[test]
    fn half_square_norm_gradient_is_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.5, -2.0, 0.25]).unwrap().with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let half = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(x).data(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn untouched_leaf_gets_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
        let y = tape.leaf(Tensor::vector(vec![3.0]).unwrap().with_grad());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(y).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn rms_norm_examples() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::ones(vec![2]));
        let x = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let y = tape.rms_norm(x, ones, 0.0).unwrap();
        let rms = 12.5f64.sqrt();
        assert!((tape.value(y).data()[0] - 3.0 / rms).abs() < 1e-15);
        assert!((tape.value(y).data()[1] - 4.0 / rms).abs() < 1e-15);
        assert!((tape.value(y).data()[0] - 0.848_528_137_423_857).abs() < 1e-12);

        let z = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.rms_norm(z, ones, 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

        let gain3 = tape.constant(Tensor::ones(vec![3]));
        let c = tape.constant(Tensor::vector(vec![-2.5; 3]).unwrap());
        let y = tape.rms_norm(c, gain3, 1e-300).unwrap();
        for v in tape.value(y).data() {
            assert!((v + 1.0).abs() < 1e-12);
        }
        assert!(tape.rms_norm(x, gain3, 0.0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(vec![1, 4]));
        let (ce, _) = tape.cross_entropy(uniform, &[2], 0).unwrap();
        assert!((tape.value(ce).item().unwrap() - 4f64.ln()).abs() < 1e-12);

        let sharp = tape.constant(t(&[vec![0.0, 800.0, 0.0]]));
        let (ce, per) = tape.cross_entropy(sharp, &[1], 0).unwrap();
        assert_eq!(tape.value(ce).item().unwrap(), 0.0);
        assert_eq!(per, vec![0.0]);

        let l = tape.constant(t(&[vec![3f64.ln(), 0.0]]));
        let (ce, _) = tape.cross_entropy(l, &[0], 9).unwrap();
        assert!((tape.value(ce).item().unwrap() + 0.75f64.ln()).abs() < 1e-12);
        assert!((tape.value(ce).item().unwrap() - 0.287_682_072_451_781).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_skips_pad_and_checks_range() {
        let mut tape = Tape::new();
        let l = tape.constant(t(&[vec![1.0, 2.0, 3.0], vec![5.0, 1.0, 0.0]]));
        let (_, per) = tape.cross_entropy(l, &[2, 0], 0).unwrap();
        assert_eq!(per[1], 0.0);
        assert!(per[0] > 0.0);
        assert!(matches!(tape.cross_entropy(l, &[7, 1], 0), Err(Error::Index(_))));
    }

    #[test]
    fn causal_attention_first_row_sees_only_itself() {
        let mut tape = Tape::new();
        let q = tape.constant(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let v = tape.constant(t(&[vec![5.0, 6.0], vec![7.0, 8.0]]));
        let o = tape.attention(q, q, v, 1, true).unwrap();
        assert_eq!(tape.value(o).row(0), &[5.0, 6.0]);
    }
}
