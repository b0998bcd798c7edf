use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::encoding::{EncodedExample, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
struct AttnIdx {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
    norm: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct FfIdx {
    wi: usize,
    wo: usize,
    norm: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderLayer {
    attn: AttnIdx,
    ff: FfIdx,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderLayer {
    self_attn: AttnIdx,
    cross_attn: AttnIdx,
    ff: FfIdx,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embedding: usize,
    enc_pos: Option<usize>,
    dec_pos: Option<usize>,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
}

enum Init {
    Normal,
    Ones,
}

struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.add(format!("{prefix}.q"), vec![d, d], Init::Normal),
            k: self.add(format!("{prefix}.k"), vec![d, d], Init::Normal),
            v: self.add(format!("{prefix}.v"), vec![d, d], Init::Normal),
            o: self.add(format!("{prefix}.o"), vec![d, d], Init::Normal),
            norm: self.add(format!("{prefix}.norm"), vec![d], Init::Ones),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfIdx {
        FfIdx {
            wi: self.add(format!("{prefix}.wi"), vec![d, d_ff], Init::Normal),
            wo: self.add(format!("{prefix}.wo"), vec![d_ff, d], Init::Normal),
            norm: self.add(format!("{prefix}.norm"), vec![d], Init::Ones),
        }
    }
}

/// Fixed parameter order for a configuration. Every consumer of flattened
/// parameters (EWC anchors, Fisher diagonals, checkpoints) relies on it.
fn layout(config: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let d = config.d_model;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let embedding = b.add("shared.embedding".into(), vec![config.vocab_size, d], Init::Normal);
    let (enc_pos, dec_pos) = if config.use_positions {
        (
            Some(b.add("encoder.position".into(), vec![config.max_positions, d], Init::Normal)),
            Some(b.add("decoder.position".into(), vec![config.max_positions, d], Init::Normal)),
        )
    } else {
        (None, None)
    };
    let encoder = (0..config.n_encoder_layers)
        .map(|l| EncoderLayer {
            attn: b.attn(&format!("encoder.layer.{l}.self_attn"), d),
            ff: b.ff(&format!("encoder.layer.{l}.ff"), d, config.d_ff),
        })
        .collect();
    let decoder = (0..config.n_decoder_layers)
        .map(|l| DecoderLayer {
            self_attn: b.attn(&format!("decoder.layer.{l}.self_attn"), d),
            cross_attn: b.attn(&format!("decoder.layer.{l}.cross_attn"), d),
            ff: b.ff(&format!("decoder.layer.{l}.ff"), d, config.d_ff),
        })
        .collect();
    (
        Layout {
            embedding,
            enc_pos,
            dec_pos,
            encoder,
            decoder,
        },
        b.specs,
    )
}

/// Per-example loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleLoss {
    /// Summed cross-entropy over scored target positions.
    pub total: f64,
    /// Number of scored target positions.
    pub len: usize,
}

impl ExampleLoss {
    pub fn per_token(&self) -> f64 {
        self.total / self.len as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    /// Σ totals / Σ lengths.
    pub mean: f64,
    pub per_example: Vec<ExampleLoss>,
}

impl BatchLoss {
    fn from_parts(per_example: Vec<ExampleLoss>) -> Self {
        let total: f64 = per_example.iter().map(|e| e.total).sum();
        let len: usize = per_example.iter().map(|e| e.len).sum();
        BatchLoss {
            mean: if len == 0 { 0.0 } else { total / len as f64 },
            per_example,
        }
    }
}

/// Model weights plus configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    seed: u64,
    layout: Layout,
}

/// Lazily binds parameters onto a tape, once each.
struct Binder<'s> {
    state: &'s ModelState,
    vars: Vec<Option<Var>>,
}

impl<'s> Binder<'s> {
    fn new(state: &'s ModelState) -> Self {
        Binder {
            state,
            vars: vec![None; state.tensors.len()],
        }
    }

    fn get(&mut self, tape: &mut Tape<'s>, idx: usize) -> Var {
        *self.vars[idx].get_or_insert_with(|| tape.param(idx, &self.state.tensors[idx]))
    }
}

impl ModelState {
    /// Fresh weights: N(0, init_std) for matrices, ones for norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        let mut init_rng = rng::stream(seed, &[rng::INIT]);
        let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::usage(e.to_string()))?;
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..n).map(|_| normal.sample(&mut init_rng)).collect(),
                Init::Ones => vec![1.0; n],
            };
            names.push(name);
            tensors.push(Tensor::from_parts_unchecked(shape, data));
        }
        Ok(ModelState {
            config,
            names,
            tensors,
            seed,
            layout,
        })
    }

    /// Rebuilds a state from stored parameters, checking names and shapes
    /// against the layout the configuration implies.
    pub fn from_named(config: ModelConfig, seed: u64, params: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        if specs.len() != params.len() {
            return Err(Error::Format(format!(
                "configuration implies {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (found, t)) in specs.iter().zip(&params) {
            if name != found || shape.as_slice() != t.shape() {
                return Err(Error::Format(format!(
                    "expected parameter {name} {shape:?}, found {found} {:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = params.into_iter().unzip();
        Ok(ModelState {
            config,
            names,
            tensors,
            seed,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Parameter names in layout order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Weight tensors in layout order.
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// All weights concatenated in layout order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites all weights from a flat vector in layout order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::dim(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_parameters()
            )));
        }
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Zero-filled gradient buffers matching the parameters.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.numel()]).collect()
    }

    /// Applies an AdamW step to every parameter.
    pub fn apply_update(&mut self, optimizer: &mut crate::numerics::AdamW, grads: &[Vec<f64>]) -> Result<()> {
        optimizer.step(&mut self.tensors, grads)
    }

    fn check_ids(&self, ids: &[u32], what: &str) -> Result<Vec<usize>> {
        if ids.len() > self.config.max_positions {
            return Err(Error::Length {
                len: ids.len(),
                limit: self.config.max_positions,
            });
        }
        ids.iter()
            .map(|&id| {
                if (id as usize) < self.config.vocab_size {
                    Ok(id as usize)
                } else {
                    Err(Error::Index(format!(
                        "{what} token {id} outside vocabulary of {}",
                        self.config.vocab_size
                    )))
                }
            })
            .collect()
    }

    fn embed<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        binder: &mut Binder<'s>,
        ids: &[usize],
        pos: Option<usize>,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let table = binder.get(tape, self.layout.embedding);
        let mut x = tape.gather(table, ids)?;
        if let Some(pos) = pos {
            let table = binder.get(tape, pos);
            let positions: Vec<usize> = (0..ids.len()).collect();
            let p = tape.gather(table, &positions)?;
            x = tape.add(x, p)?;
        }
        self.dropout(tape, x, rng)
    }

    fn dropout(&self, tape: &mut Tape<'_>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(r) if self.config.dropout_rate > 0.0 => tape.dropout(x, self.config.dropout_rate, *r),
            _ => Ok(x),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_block<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        binder: &mut Binder<'s>,
        idx: &AttnIdx,
        x: Var,
        memory: Var,
        causal: bool,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (wq, wk, wv, wo) = (
            binder.get(tape, idx.q),
            binder.get(tape, idx.k),
            binder.get(tape, idx.v),
            binder.get(tape, idx.o),
        );
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(memory, wk)?;
        let v = tape.matmul(memory, wv)?;
        let a = tape.attention(q, k, v, self.config.n_heads, causal)?;
        let a = tape.matmul(a, wo)?;
        let a = self.dropout(tape, a, rng)?;
        let r = tape.add(x, a)?;
        let gain = binder.get(tape, idx.norm);
        tape.rms_norm(r, gain, self.config.norm_eps)
    }

    fn ff_block<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        binder: &mut Binder<'s>,
        idx: &FfIdx,
        x: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (wi, wo) = (binder.get(tape, idx.wi), binder.get(tape, idx.wo));
        let h = tape.matmul(x, wi)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, wo)?;
        let h = self.dropout(tape, h, rng)?;
        let r = tape.add(x, h)?;
        let gain = binder.get(tape, idx.norm);
        tape.rms_norm(r, gain, self.config.norm_eps)
    }

    fn encode_on<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        binder: &mut Binder<'s>,
        input_ids: &[u32],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if input_ids.is_empty() {
            return Err(Error::usage("empty encoder input"));
        }
        let ids = self.check_ids(input_ids, "input")?;
        let mut x = self.embed(tape, binder, &ids, self.layout.enc_pos, rng)?;
        for layer in &self.layout.encoder {
            x = self.attention_block(tape, binder, &layer.attn, x, x, false, rng)?;
            x = self.ff_block(tape, binder, &layer.ff, x, rng)?;
        }
        self.dropout(tape, x, rng)
    }

    fn decode_on<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        binder: &mut Binder<'s>,
        decoder_ids: &[u32],
        memory: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let ids = self.check_ids(decoder_ids, "decoder")?;
        let mut y = self.embed(tape, binder, &ids, self.layout.dec_pos, rng)?;
        for layer in &self.layout.decoder {
            y = self.attention_block(tape, binder, &layer.self_attn, y, y, true, rng)?;
            y = self.attention_block(tape, binder, &layer.cross_attn, y, memory, false, rng)?;
            y = self.ff_block(tape, binder, &layer.ff, y, rng)?;
        }
        let y = self.dropout(tape, y, rng)?;
        let table = binder.get(tape, self.layout.embedding);
        let logits = tape.matmul_t(y, table)?;
        tape.scale(logits, 1.0 / (self.config.d_model as f64).sqrt())
    }

    /// Teacher-forced decoder input: BOS followed by all but the last target.
    pub fn decoder_input(target_ids: &[u32]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(target_ids.len().max(1));
        ids.push(BOS);
        if let Some((_, head)) = target_ids.split_last() {
            ids.extend_from_slice(head);
        }
        ids
    }

    /// Encoder hidden states, `len(input) × d_model`. Dropout is active only
    /// when `dropout` supplies a generator.
    pub fn encode_seq(&self, input_ids: &[u32], mut dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(self);
        let h = self.encode_on(&mut tape, &mut binder, input_ids, &mut dropout)?;
        Ok(tape.value(h).clone())
    }

    /// Teacher-forced logits, one row per target position (at least one).
    pub fn forward(&self, input_ids: &[u32], target_ids: &[u32], mut dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(self);
        let memory = self.encode_on(&mut tape, &mut binder, input_ids, &mut dropout)?;
        let dec_in = Self::decoder_input(target_ids);
        let logits = self.decode_on(&mut tape, &mut binder, &dec_in, memory, &mut dropout)?;
        Ok(tape.value(logits).clone())
    }

    fn example_on<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        binder: &mut Binder<'s>,
        example: &EncodedExample,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, ExampleLoss)> {
        if example.target_ids.is_empty() {
            return Err(Error::validation("target-nonempty", "example has an empty target"));
        }
        let memory = self.encode_on(tape, binder, &example.input_ids, rng)?;
        let dec_in = Self::decoder_input(&example.target_ids);
        let logits = self.decode_on(tape, binder, &dec_in, memory, rng)?;
        let (total, _) = tape.cross_entropy(logits, &example.target_ids, PAD)?;
        let loss = ExampleLoss {
            total: tape.value(total).item()?,
            len: example.target_len(),
        };
        if loss.len == 0 {
            return Err(Error::validation("target-nonempty", "example target is all padding"));
        }
        Ok((total, loss))
    }

    /// Summed target cross-entropy of one example.
    pub fn example_loss(&self, example: &EncodedExample, mut dropout: Option<&mut ChaCha8Rng>) -> Result<ExampleLoss> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(self);
        Ok(self.example_on(&mut tape, &mut binder, example, &mut dropout)?.1)
    }

    /// Batch loss without gradients. `dropout_seed` switches on train mode.
    pub fn loss(&self, batch: &[EncodedExample], dropout_seed: Option<u64>) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::usage("loss of an empty batch"));
        }
        let per_example = batch
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut r = dropout_seed.map(|s| rng::stream(s, &[i as u64]));
                self.example_loss(ex, r.as_mut())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchLoss::from_parts(per_example))
    }

    /// Gradient of `weight · total CE` for one example, added into `grads`.
    pub fn accumulate_example_grad(
        &self,
        example: &EncodedExample,
        weight: f64,
        mut dropout: Option<&mut ChaCha8Rng>,
        grads: &mut [Vec<f64>],
    ) -> Result<ExampleLoss> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(self);
        let (total, loss) = self.example_on(&mut tape, &mut binder, example, &mut dropout)?;
        let root = tape.scale(total, weight)?;
        tape.backward(root)?.accumulate_params(grads);
        Ok(loss)
    }

    /// Batch loss (Σ totals / Σ lengths) and its gradient for every parameter.
    pub fn loss_and_grad(&self, batch: &[EncodedExample], dropout_seed: Option<u64>) -> Result<(BatchLoss, Vec<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::usage("loss of an empty batch"));
        }
        let tokens: usize = batch.iter().map(EncodedExample::target_len).sum();
        if tokens == 0 {
            return Err(Error::validation("target-nonempty", "batch has no target tokens"));
        }
        let weight = 1.0 / tokens as f64;
        let mut grads = self.zero_grads();
        let mut per_example = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            let mut r = dropout_seed.map(|s| rng::stream(s, &[i as u64]));
            per_example.push(self.accumulate_example_grad(ex, weight, r.as_mut(), &mut grads)?);
        }
        Ok((BatchLoss::from_parts(per_example), grads))
    }

    /// Greedy decoding from BOS, stopping at EOS (not emitted) or after
    /// `max_len` tokens. Ties go to the lowest token id.
    pub fn generate(&self, input_ids: &[u32], max_len: usize) -> Result<Vec<u32>> {
        if max_len == 0 {
            return Err(Error::usage("max_len must be at least 1"));
        }
        let memory = self.encode_seq(input_ids, None)?;
        let mut out = Vec::new();
        let mut dec_in = vec![BOS];
        let limit = max_len.min(self.config.max_positions);
        while out.len() < limit {
            let mut tape = Tape::new();
            let mut binder = Binder::new(self);
            let mem = tape.constant(memory.clone());
            let logits = self.decode_on(&mut tape, &mut binder, &dec_in, mem, &mut None)?;
            let t = tape.value(logits);
            let last = t.row(t.dims2()?.0 - 1);
            let next = argmax(last) as u32;
            if next == EOS {
                break;
            }
            out.push(next);
            dec_in.push(next);
        }
        Ok(out)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
