//! Decoder-only transformer with optional tempered softmax and two task
//! heads sharing one backbone.
//!
//! Each block computes `y = X + attn(X)`, `z = y + mlp(y)` and then
//! `X' = layer_norm(z)`. Attention heads are concatenated without an output
//! projection and there are no positional embeddings.

mod decode;
mod graph;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::kernels::{layer_norm, softmax_in_place};
use crate::numerics::gradcheck::relative_error;
use crate::numerics::{matmul, Activation, GradReport, Real, Tensor};

pub use decode::{argmax_lowest, greedy_decode, SequenceModel};
pub use graph::LossItem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxMode {
    #[default]
    Standard,
    Tempered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEmbeddings {
    #[default]
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadId {
    Main,
    Aux,
}

impl HeadId {
    pub fn name(self) -> &'static str {
        match self {
            HeadId::Main => "main",
            HeadId::Aux => "aux",
        }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(HeadId::Main),
            "aux" => Ok(HeadId::Aux),
            other => Err(Error::Contract(format!("unknown head '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub d: usize,
    pub heads: usize,
    /// MLP inner width.
    pub d_mlp: usize,
    pub vocab: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub softmax_mode: SoftmaxMode,
    pub context_length: usize,
    #[serde(default)]
    pub positional_embeddings: PositionalEmbeddings,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Contract(format!("d={} not divisible by h={}", self.d, self.heads)));
        }
        if self.vocab < 3 {
            return Err(Error::Contract(format!("vocabulary of {} tokens", self.vocab)));
        }
        if self.d_mlp == 0 {
            return Err(Error::Contract("MLP width must be positive".into()));
        }
        if self.context_length < 4 {
            return Err(Error::Contract(format!("context length {}", self.context_length)));
        }
        Ok(())
    }

    /// Longest instance whose input, ⊥ and output fit the context with a
    /// token to spare.
    pub fn max_instance_length(&self) -> usize {
        (self.context_length - 2) / 2
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Dot-product scale applied before the temperature.
    pub fn score_scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }
}

/// One block's weights in row-vector form. Head `h` of `wq`, `wk`, `wv`
/// owns columns `h*d/H..(h+1)*d/H`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<R: Real = f64> {
    pub wq: Tensor<R>,
    pub wk: Tensor<R>,
    pub wv: Tensor<R>,
    pub w1: Tensor<R>,
    pub b1: Tensor<R>,
    pub w2: Tensor<R>,
    pub b2: Tensor<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<R: Real = f64> {
    pub w: Tensor<R>,
    pub b: Tensor<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskHeads<R: Real = f64> {
    pub embedding: Tensor<R>,
    pub main: Head<R>,
    pub aux: Head<R>,
}

impl<R: Real> TaskHeads<R> {
    pub fn head(&self, id: HeadId) -> &Head<R> {
        match id {
            HeadId::Main => &self.main,
            HeadId::Aux => &self.aux,
        }
    }
}

/// Per-layer learnable β; the attention temperature is `β·ln n` with `n`
/// the number of tokens before ⊥.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperConfig<R: Real = f64> {
    pub betas: Vec<Tensor<R>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<R: Real = f64> {
    pub config: ModelConfig,
    pub blocks: Vec<BlockParams<R>>,
    pub heads: TaskHeads<R>,
    pub temper: TemperConfig<R>,
}

/// Pre- and post-MLP embeddings per depth, each `[T, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace<R: Real = f64> {
    pub pre: Vec<Tensor<R>>,
    pub post: Vec<Tensor<R>>,
}

impl<R: Real> ActivationTrace<R> {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    pub fn positions(&self) -> usize {
        self.pre.first().map_or(0, |t| t.rows())
    }

    pub fn pre(&self, i: usize, j: usize) -> &[R] {
        self.pre[j].row(i)
    }

    pub fn post(&self, i: usize, j: usize) -> &[R] {
        self.post[j].row(i)
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<R: Real = f64> {
    pub logits: Tensor<R>,
    pub trace: Option<ActivationTrace<R>>,
}

/// Attention temperature for a layer.
pub fn tempered_tau(mode: SoftmaxMode, beta: f64, n_input: usize) -> Result<f64> {
    match mode {
        SoftmaxMode::Standard => Ok(1.0),
        SoftmaxMode::Tempered => {
            if n_input < 2 {
                return Err(Error::Domain(format!("tempered softmax needs n ≥ 2, got {n_input}")));
            }
            Ok(beta * (n_input as f64).ln())
        }
    }
}

/// Static shape of the attention computation inside a block.
#[derive(Clone, Copy, Debug)]
pub struct BlockShape {
    pub heads: usize,
    pub scale: f64,
    pub activation: Activation,
}

pub(crate) struct BlockOutputs<R: Real> {
    pub pre: Tensor<R>,
    pub post: Tensor<R>,
    pub out: Tensor<R>,
}

pub(crate) fn block_forward<R: Real>(
    x: &Tensor<R>,
    p: &BlockParams<R>,
    shape: BlockShape,
    tau: R,
    normalize: bool,
) -> Result<BlockOutputs<R>> {
    if !(tau > R::zero()) {
        return Err(Error::Domain(format!("non-positive temperature {tau}")));
    }
    let (t, d) = (x.rows(), x.cols());
    if shape.heads == 0 || d % shape.heads != 0 || p.wq.shape() != [d, d] {
        return Err(Error::Dimension(format!("block expects width {d} with {} heads", shape.heads)));
    }
    let q = matmul(x, &p.wq)?;
    let k = matmul(x, &p.wk)?;
    let v = matmul(x, &p.wv)?;
    let hd = d / shape.heads;
    let factor = R::c(shape.scale) * tau;
    let mut y = x.clone();
    let mut w = vec![R::zero(); t];
    for h in 0..shape.heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..t {
            let qi = &q.row(i)[cols.clone()];
            for j in 0..=i {
                let kj = &k.row(j)[cols.clone()];
                w[j] = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<R>() * factor;
            }
            softmax_in_place(&mut w[..=i], R::one());
            let yi = &mut y.row_mut(i)[cols.clone()];
            for (j, &wj) in w[..=i].iter().enumerate() {
                for (o, &vv) in yi.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o = *o + wj * vv;
                }
            }
        }
    }
    let mut hidden = matmul(&y, &p.w1)?;
    for i in 0..t {
        for (hv, &b) in hidden.row_mut(i).iter_mut().zip(p.b1.data()) {
            *hv = shape.activation.apply(*hv + b);
        }
    }
    let mut z = matmul(&hidden, &p.w2)?;
    for i in 0..t {
        for ((zv, &b), &yv) in z.row_mut(i).iter_mut().zip(p.b2.data()).zip(y.row(i)) {
            *zv = *zv + b + yv;
        }
    }
    let out = if normalize {
        let mut out = Tensor::zeros(&[t, d]);
        for i in 0..t {
            out.row_mut(i).copy_from_slice(&layer_norm(z.row(i)));
        }
        out
    } else {
        z.clone()
    };
    Ok(BlockOutputs { pre: y, post: z, out })
}

/// One transformer block: attention with residual, MLP with residual, then
/// an optional layer norm.
pub fn attention_block<R: Real>(
    x: &Tensor<R>,
    params: &BlockParams<R>,
    shape: BlockShape,
    tau: R,
    normalize: bool,
) -> Result<Tensor<R>> {
    if !x.is_finite() {
        return Err(Error::NonFinite("block input".into()));
    }
    Ok(block_forward(x, params, shape, tau, normalize)?.out)
}

/// `embeddings·W + b` row-wise.
pub fn apply_head<R: Real>(head: &Head<R>, embeddings: &Tensor<R>) -> Result<Tensor<R>> {
    let mut logits = matmul(embeddings, &head.w)?;
    for i in 0..logits.rows() {
        for (l, &b) in logits.row_mut(i).iter_mut().zip(head.b.data()) {
            *l = *l + b;
        }
    }
    Ok(logits)
}

/// Mean cross-entropy over rows with `mask` set.
pub fn masked_next_token_loss<R: Real>(logits: &Tensor<R>, targets: &[u32], mask: &[bool]) -> Result<R> {
    let rows = logits.rows();
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::Dimension(format!(
            "{} targets / {} mask entries for {rows} rows",
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Contract("loss mask selects no positions".into()));
    }
    let mut total = R::zero();
    for i in (0..rows).filter(|&i| mask[i]) {
        let row = logits.row(i);
        let t = targets[i] as usize;
        if t >= row.len() {
            return Err(Error::UnknownToken(targets[i]));
        }
        let max = row.iter().fold(R::neg_infinity(), |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<R>().ln();
        total = total + lse - row[t];
    }
    Ok(total / R::c(count as f64))
}

impl<R: Real> Model<R> {
    /// Seeded Gaussian initialization: std 0.02 for the embedding and heads,
    /// `0.02/√(2·depth)` for block weights, zero biases, β = 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, m, q) = (config.d, config.d_mlp, config.vocab);
        let base = 0.02;
        let block_std = base / ((2 * config.depth.max(1)) as f64).sqrt();
        let mut gaussian = |shape: &[usize], std: f64| -> Tensor<R> {
            let dist = Normal::new(0.0, std).expect("positive std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| R::c(dist.sample(&mut rng))).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches data")
        };
        let embedding = gaussian(&[q, d], base);
        let blocks = (0..config.depth)
            .map(|_| BlockParams {
                wq: gaussian(&[d, d], block_std),
                wk: gaussian(&[d, d], block_std),
                wv: gaussian(&[d, d], block_std),
                w1: gaussian(&[d, m], block_std),
                b1: Tensor::zeros(&[m]),
                w2: gaussian(&[m, d], block_std),
                b2: Tensor::zeros(&[d]),
            })
            .collect();
        let main = Head { w: gaussian(&[d, q], base), b: Tensor::zeros(&[q]) };
        let aux = Head { w: gaussian(&[d, q], base), b: Tensor::zeros(&[q]) };
        let temper = TemperConfig { betas: vec![Tensor::scalar(R::one()); config.depth] };
        Ok(Self { config, blocks, heads: TaskHeads { embedding, main, aux }, temper })
    }

    /// Trainable parameters in a fixed order. β is listed only in tempered
    /// mode.
    pub fn params(&self) -> Vec<(String, &Tensor<R>)> {
        let mut out = vec![("embedding".to_string(), &self.heads.embedding)];
        for (j, b) in self.blocks.iter().enumerate() {
            for (n, t) in [
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("blocks.{j}.{n}"), t));
            }
            if self.config.softmax_mode == SoftmaxMode::Tempered {
                out.push((format!("blocks.{j}.beta"), &self.temper.betas[j]));
            }
        }
        for (h, head) in [("main", &self.heads.main), ("aux", &self.heads.aux)] {
            out.push((format!("heads.{h}.w"), &head.w));
            out.push((format!("heads.{h}.b"), &head.b));
        }
        out
    }

    /// Mutable view of [`Model::params`] in the same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<R>)> {
        let tempered = self.config.softmax_mode == SoftmaxMode::Tempered;
        let TaskHeads { embedding, main, aux } = &mut self.heads;
        let mut out = vec![("embedding".to_string(), embedding)];
        for (j, (b, beta)) in self.blocks.iter_mut().zip(self.temper.betas.iter_mut()).enumerate() {
            for (n, t) in [
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("w1", &mut b.w1),
                ("b1", &mut b.b1),
                ("w2", &mut b.w2),
                ("b2", &mut b.b2),
            ] {
                out.push((format!("blocks.{j}.{n}"), t));
            }
            if tempered {
                out.push((format!("blocks.{j}.beta"), beta));
            }
        }
        for (h, head) in [("main", main), ("aux", aux)] {
            out.push((format!("heads.{h}.w"), &mut head.w));
            out.push((format!("heads.{h}.b"), &mut head.b));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<S: Real>(&self) -> Model<S> {
        let block = |b: &BlockParams<R>| BlockParams {
            wq: b.wq.cast(),
            wk: b.wk.cast(),
            wv: b.wv.cast(),
            w1: b.w1.cast(),
            b1: b.b1.cast(),
            w2: b.w2.cast(),
            b2: b.b2.cast(),
        };
        let head = |h: &Head<R>| Head { w: h.w.cast(), b: h.b.cast() };
        Model {
            config: self.config.clone(),
            blocks: self.blocks.iter().map(block).collect(),
            heads: TaskHeads {
                embedding: self.heads.embedding.cast(),
                main: head(&self.heads.main),
                aux: head(&self.heads.aux),
            },
            temper: TemperConfig { betas: self.temper.betas.iter().map(|b| b.cast()).collect() },
        }
    }

    pub(crate) fn block_shape(&self) -> BlockShape {
        BlockShape {
            heads: self.config.heads,
            scale: self.config.score_scale(),
            activation: self.config.activation,
        }
    }

    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.config.context_length {
            return Err(Error::Capacity(format!(
                "{} tokens exceed context {}",
                tokens.len(),
                self.config.context_length
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(Error::UnknownToken(bad));
        }
        Ok(())
    }

    pub(crate) fn layer_tau(&self, j: usize, n_input: usize) -> Result<f64> {
        tempered_tau(self.config.softmax_mode, self.temper.betas[j].item().f64(), n_input)
    }

    /// Final embeddings of a single sequence, optionally with the trace.
    pub fn embed(&self, tokens: &[u32], n_input: usize, capture: bool) -> Result<(Tensor<R>, Option<ActivationTrace<R>>)> {
        self.check_tokens(tokens)?;
        let d = self.config.d;
        let mut data = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            data.extend_from_slice(self.heads.embedding.row(t as usize));
        }
        let mut x = Tensor::matrix(tokens.len(), d, data)?;
        let mut trace = capture.then(|| ActivationTrace { pre: Vec::new(), post: Vec::new() });
        let shape = self.block_shape();
        for (j, block) in self.blocks.iter().enumerate() {
            let tau = R::c(self.layer_tau(j, n_input)?);
            let outs = block_forward(&x, block, shape, tau, true)?;
            if let Some(tr) = trace.as_mut() {
                tr.pre.push(outs.pre);
                tr.post.push(outs.post);
            }
            x = outs.out;
        }
        Ok((x, trace))
    }

    /// Logits of every position under the chosen head.
    pub fn forward(&self, tokens: &[u32], n_input: usize, head: HeadId, capture: bool) -> Result<ForwardOutput<R>> {
        let (x, trace) = self.embed(tokens, n_input, capture)?;
        let logits = apply_head(self.heads.head(head), &x)?;
        Ok(ForwardOutput { logits, trace })
    }
}

/// Names of the parameters owned by a head.
pub fn is_head_param(name: &str, head: HeadId) -> bool {
    name.starts_with(&format!("heads.{}.", head.name()))
}

impl Model<f64> {
    /// Mean masked loss of `items` through the inference path.
    pub fn batch_loss(&self, items: &[LossItem<'_>], head: HeadId) -> Result<f64> {
        let (mut total, mut count) = (0.0, 0usize);
        for it in items {
            let k = it.mask.iter().filter(|&&m| m).count();
            if k == 0 {
                continue;
            }
            let logits = self.forward(it.tokens, it.n_input, head, false)?.logits;
            total += masked_next_token_loss(&logits, it.targets, it.mask)? * k as f64;
            count += k;
        }
        if count == 0 {
            return Err(Error::Contract("loss mask selects no positions".into()));
        }
        Ok(total / count as f64)
    }

    /// Compares [`Model::loss_and_gradients`] with central differences of
    /// [`Model::batch_loss`], parameter tensor by parameter tensor.
    pub fn gradient_check(&self, items: &[LossItem<'_>], head: HeadId, h: f64, tol: f64) -> Result<GradReport> {
        let (_, analytic) = self.loss_and_gradients(items, head)?;
        let mut probe = self.clone();
        let mut per_param = Vec::with_capacity(analytic.len());
        for (p, (name, grad)) in analytic.iter().enumerate() {
            let mut numeric = vec![0.0; grad.numel()];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = probe.params_mut()[p].1.data()[i];
                probe.params_mut()[p].1.data_mut()[i] = orig + h;
                let up = probe.batch_loss(items, head)?;
                probe.params_mut()[p].1.data_mut()[i] = orig - h;
                let down = probe.batch_loss(items, head)?;
                probe.params_mut()[p].1.data_mut()[i] = orig;
                *slot = (up - down) / (2.0 * h);
            }
            per_param.push((name.clone(), relative_error(grad.data(), &numeric)));
        }
        let max_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        Ok(GradReport { per_param, max_error, tolerance: tol, pass: max_error < tol })
    }
}

#[cfg(test)]
mod tests;
