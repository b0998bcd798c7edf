//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use lifelong_qg::encoding::{EOS, NUM_SPECIALS};
use lifelong_qg::numerics::{finite_difference, relative_error, Tape, Tensor, Var};
use lifelong_qg::{rng, EncodedExample, ModelConfig, ModelState, Result};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-3;

pub fn random_tensor<R: Rng>(r: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Entries with magnitude in `[lo, hi)` and random sign, for ops whose
/// curvature blows up near zero (kinks, tiny RMS rows).
pub fn random_away<R: Rng>(r: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = r.random_range(lo..hi);
            if r.random_bool(0.5) {
                -v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ w ⊙ out` with fixed random weights, so every output entry matters.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = random_tensor(&mut rng::stream(seed, &[99]), &shape, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

/// Largest relative error between the tape gradient and central differences
/// of the scalar built by `build`, over every entry of every input.
pub fn op_grad_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars).unwrap();
        tape.value(root).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let root = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        let numeric = finite_difference(input.data(), FD_STEP, |x| {
            let mut probe = inputs.to_vec();
            probe[i] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
            eval(&probe)
        });
        for (a, n) in analytic.data().iter().zip(&numeric) {
            worst = worst.max(relative_error(*a, *n, FD_FLOOR));
        }
    }
    worst
}

/// A tiny model configuration drawn from `seed`.
pub fn tiny_config(seed: u64) -> ModelConfig {
    let mut r = rng::stream(seed, &[7]);
    let heads = [1usize, 2][r.random_range(0..2)];
    ModelConfig {
        vocab_size: r.random_range(8..14),
        d_model: 4 * heads,
        n_heads: heads,
        n_encoder_layers: r.random_range(1..3),
        n_decoder_layers: r.random_range(1..3),
        d_ff: 12,
        max_positions: 8,
        dropout_rate: 0.1,
        init_std: 0.3,
        ..ModelConfig::default()
    }
}

pub fn random_examples(seed: u64, n: usize, vocab_size: usize, max_len: usize) -> Vec<EncodedExample> {
    let mut r = rng::stream(seed, &[8]);
    let lo = NUM_SPECIALS as u32;
    (0..n)
        .map(|i| {
            let in_len = r.random_range(1..=max_len);
            let tgt_len = r.random_range(1..max_len);
            let mut target: Vec<u32> = (0..tgt_len).map(|_| r.random_range(lo..vocab_size as u32)).collect();
            target.push(EOS);
            EncodedExample {
                input_ids: (0..in_len).map(|_| r.random_range(lo..vocab_size as u32)).collect(),
                target_ids: target,
                source_index: i,
            }
        })
        .collect()
}

/// Largest relative error between `loss_and_grad` and central differences of
/// the batch mean loss over every parameter.
pub fn model_grad_error(seed: u64, dropout_seed: Option<u64>) -> f64 {
    let config = tiny_config(seed);
    let mut model = ModelState::new(config.clone(), seed).unwrap();
    let batch = random_examples(seed, 2, config.vocab_size, config.max_positions - 1);
    let (_, grads) = model.loss_and_grad(&batch, dropout_seed).unwrap();
    let theta = model.flatten();
    let numeric = finite_difference(&theta, FD_STEP, |x| {
        model.load_flat(x).unwrap();
        model.loss(&batch, dropout_seed).unwrap().mean
    });
    grads
        .iter()
        .flatten()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n, FD_FLOOR))
        .fold(0.0, f64::max)
}

/// Sort-based top-N oracle over (score, index) pairs: the returned indices
/// in rank order.
pub fn oracle_top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Independent TF-IDF cosine with smoothed idf over per-example documents.
pub fn oracle_tfidf<'a>(current: &[Vec<&'a str>], memory: &[Vec<&'a str>]) -> f64 {
    let docs: Vec<&Vec<&'a str>> = current.iter().chain(memory).collect();
    let n = docs.len() as f64;
    let mut df: HashMap<&'a str, f64> = HashMap::new();
    for d in &docs {
        for t in d.iter().copied().collect::<HashSet<_>>() {
            *df.entry(t).or_default() += 1.0;
        }
    }
    let vector = |side: &[Vec<&'a str>]| -> HashMap<&'a str, f64> {
        let mut v = HashMap::new();
        for &t in side.iter().flatten() {
            *v.entry(t).or_default() += ((1.0 + n) / (1.0 + df[t])).ln() + 1.0;
        }
        v
    };
    let (a, b) = (vector(current), vector(memory));
    let dot: f64 = a.iter().map(|(t, x)| x * b.get(t).unwrap_or(&0.0)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Row-by-row recomputation of the seen and first aggregates from an
/// upper-triangular `rows[t][i - t]` layout.
pub fn oracle_aggregates(rows: &[Vec<f64>]) -> (f64, f64) {
    let t_count = rows.len();
    let mut seen_total = 0.0;
    let mut first_total = 0.0;
    for i in 0..t_count {
        let mut col = 0.0;
        for (t, row) in rows.iter().enumerate().take(i + 1) {
            col += row[i - t];
        }
        seen_total += col / (i + 1) as f64;
        first_total += rows[0][i];
    }
    (seen_total / t_count as f64, first_total / t_count as f64)
}

/// A short question-generation pair over a 40-word vocabulary.
pub fn single_pair() -> EncodedExample {
    let input: Vec<u32> = [5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18].to_vec();
    let mut target: Vec<u32> = [20, 21, 9, 10, 11, 22, 13, 23].to_vec();
    target.push(EOS);
    EncodedExample {
        input_ids: input,
        target_ids: target,
        source_index: 0,
    }
}

/// Trains `model` on one example with AdamW (no dropout) until its loss
/// falls below `target_loss` or `max_steps` pass. Returns steps and final loss.
pub fn overfit(model: &mut ModelState, example: &EncodedExample, lr: f64, target_loss: f64, max_steps: usize) -> (usize, f64) {
    use lifelong_qg::numerics::{clip_global_norm, AdamW, AdamWConfig};
    let batch = std::slice::from_ref(example);
    let mut opt = AdamW::new(AdamWConfig {
        lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut loss = model.loss(batch, None).unwrap().mean;
    let mut steps = 0;
    while loss >= target_loss && steps < max_steps {
        let (_, mut grads) = model.loss_and_grad(batch, None).unwrap();
        clip_global_norm(&mut grads, 1.0).unwrap();
        model.apply_update(&mut opt, &grads).unwrap();
        steps += 1;
        loss = model.loss(batch, None).unwrap().mean;
    }
    (steps, loss)
}

/// Four synthetic tasks with vocabulary overlap rising from disjoint to
/// partial, trained with the small acceptance model.
pub fn suite_config(seed: u64, strategy: lifelong_qg::Strategy) -> lifelong_qg::ExperimentConfig {
    use lifelong_qg::encoding::Format;
    use lifelong_qg::harness::SynthParams;
    lifelong_qg::ExperimentConfig {
        synthetic: Some(SynthParams {
            num_tasks: 4,
            overlaps: vec![0.0, 0.3, 0.6],
            train_size: 500,
            dev_size: 60,
            test_size: 200,
            formats: vec![Format::Abstractive, Format::Multichoice, Format::Boolean],
            primary_share: 1.0,
            common_share: 0.7,
            ..SynthParams::default()
        }),
        strategy,
        replay_size: 16,
        lr: 3e-3,
        batch_size: 16,
        max_epochs: 20,
        patience: 3,
        max_input_len: 64,
        eval_max_len: 12,
        model: ModelConfig {
            d_model: 32,
            n_heads: 4,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_ff: 64,
            max_positions: 64,
            init_std: 0.2,
            ..ModelConfig::default()
        },
        seed,
        ..lifelong_qg::ExperimentConfig::default()
    }
}

/// A two-task shrink of [`suite_config`] for quick harness checks.
pub fn pair_config(seed: u64, strategy: lifelong_qg::Strategy, overlap: f64) -> lifelong_qg::ExperimentConfig {
    let mut c = suite_config(seed, strategy);
    let p = c.synthetic.as_mut().unwrap();
    p.num_tasks = 2;
    p.overlaps = vec![overlap];
    p.train_size = 150;
    p.dev_size = 20;
    p.test_size = 20;
    c.max_epochs = 8;
    c
}

fn dims(seed: u64, label: u64) -> (rand_chacha::ChaCha8Rng, usize, usize) {
    let mut r = rng::stream(seed, &[11, label]);
    let rows = r.random_range(1..5);
    let cols = r.random_range(1..5);
    (r, rows, cols)
}

/// Finite-difference error of every differentiable tape operation on
/// inputs drawn from `seed`.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let ws = move |t: &mut Tape, o: Var| weighted_sum(t, o, seed);
    for (k, name) in ["add", "sub", "mul"].into_iter().enumerate() {
        let (mut r, m, n) = dims(seed, k as u64);
        let ins = [random_tensor(&mut r, &[m, n], 1.0), random_tensor(&mut r, &[m, n], 1.0)];
        out.push((name, op_grad_error(&ins, |t, v| {
            let o = match k {
                0 => t.add(v[0], v[1])?,
                1 => t.sub(v[0], v[1])?,
                _ => t.mul(v[0], v[1])?,
            };
            ws(t, o)
        })));
    }
    let (mut r, m, n) = dims(seed, 10);
    let x = [random_away(&mut r, &[m, n], 0.05, 1.0)];
    out.push(("scale", op_grad_error(&x, |t, v| {
        let o = t.scale(v[0], -1.7)?;
        ws(t, o)
    })));
    out.push(("relu", op_grad_error(&x, |t, v| {
        let o = t.relu(v[0])?;
        ws(t, o)
    })));
    out.push(("sum", op_grad_error(&x, |t, v| t.sum(v[0]))));
    out.push(("transpose", op_grad_error(&x, |t, v| {
        let o = t.transpose(v[0])?;
        ws(t, o)
    })));
    for axis in 0..2 {
        let (mut r, m, n) = dims(seed, 20 + axis as u64);
        let x = [random_tensor(&mut r, &[m, n], 2.0)];
        out.push(("softmax", op_grad_error(&x, |t, v| {
            let o = t.softmax(v[0], axis)?;
            ws(t, o)
        })));
    }
    let (mut r, m, k) = dims(seed, 30);
    let n = r.random_range(1..5);
    let ab = [random_tensor(&mut r, &[m, k], 1.0), random_tensor(&mut r, &[k, n], 1.0)];
    out.push(("matmul", op_grad_error(&ab, |t, v| {
        let o = t.matmul(v[0], v[1])?;
        ws(t, o)
    })));
    let abt = [ab[0].clone(), random_tensor(&mut r, &[n, k], 1.0)];
    out.push(("matmul_t", op_grad_error(&abt, |t, v| {
        let o = t.matmul_t(v[0], v[1])?;
        ws(t, o)
    })));
    let (mut r, m, n) = dims(seed, 40);
    let xg = [random_away(&mut r, &[m, n], 0.1, 1.0), random_tensor(&mut r, &[n], 1.5)];
    out.push(("rms_norm", op_grad_error(&xg, |t, v| {
        let o = t.rms_norm(v[0], v[1], 1e-6)?;
        ws(t, o)
    })));
    let ids: Vec<usize> = (0..r.random_range(1..7)).map(|_| r.random_range(0..m)).collect();
    out.push(("gather", op_grad_error(&xg[..1], |t, v| {
        let o = t.gather(v[0], &ids)?;
        ws(t, o)
    })));
    out.push(("dropout", op_grad_error(&xg[..1], |t, v| {
        let o = t.dropout(v[0], 0.3, &mut rng::stream(seed, &[rng::DROPOUT]))?;
        ws(t, o)
    })));
    let mask: Vec<f64> = (0..m * n).map(|_| if r.random_bool(0.5) { 2.0 } else { 0.0 }).collect();
    out.push(("apply_mask", op_grad_error(&xg[..1], |t, v| {
        let o = t.apply_mask(v[0], mask.clone())?;
        ws(t, o)
    })));
    for causal in [false, true] {
        let mut r = rng::stream(seed, &[12, causal as u64]);
        let heads = r.random_range(1..3);
        let d = heads * r.random_range(1..4);
        let tq = r.random_range(1..5);
        let tk = if causal { tq } else { r.random_range(1..5) };
        let qkv = [
            random_tensor(&mut r, &[tq, d], 1.0),
            random_tensor(&mut r, &[tk, d], 1.0),
            random_tensor(&mut r, &[tk, d], 1.0),
        ];
        out.push(("attention", op_grad_error(&qkv, |t, v| {
            let o = t.attention(v[0], v[1], v[2], heads, causal)?;
            ws(t, o)
        })));
    }
    let mut r = rng::stream(seed, &[13]);
    let (rows, classes) = (r.random_range(1..5), r.random_range(2..6));
    let targets: Vec<u32> = (0..rows).map(|_| r.random_range(0..classes as u32)).collect();
    let pad = r.random_range(0..classes as u32);
    let logits = [random_tensor(&mut r, &[rows, classes], 2.0)];
    out.push(("cross_entropy", op_grad_error(&logits, |t, v| Ok(t.cross_entropy(v[0], &targets, pad)?.0))));
    let mut r = rng::stream(seed, &[14]);
    let ins = [
        random_tensor(&mut r, &[3, 4], 1.0),
        random_tensor(&mut r, &[4, 4], 1.0),
        random_tensor(&mut r, &[4], 1.0),
    ];
    out.push(("composite", op_grad_error(&ins, |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.relu(h)?;
        let n = t.rms_norm(h, v[2], 1e-6)?;
        let a = t.attention(n, n, v[0], 2, true)?;
        let s = t.softmax(a, 1)?;
        let (ce, _) = t.cross_entropy(s, &[1, 0, 3], 2)?;
        let extra = ws(t, a)?;
        t.add(ce, extra)
    })));
    out
}
