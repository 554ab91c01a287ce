//! Adam with a warmup-then-cosine schedule, strict main/aux alternation and
//! resumable checkpoints.

mod checkpoint;

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, EncodedExample, GenConfig, LengthSpec, TokenTable};
use crate::error::{Error, Result};
use crate::model::{is_head_param, HeadId, LossItem, Model, ModelConfig, PositionalEmbeddings, SoftmaxMode};
use crate::numerics::{Activation, Real, Tensor};

pub use checkpoint::{checkpoint_precision, load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub clip: Option<f64>,
}

impl TrainConfig {
    /// Update budget of the desk preset.
    pub const DESK_STEPS: usize = 5000;

    /// Desk-scale preset: lr 1e-3, batch 64, warmup over the first 5%.
    pub fn desk(seed: u64, total_steps: usize) -> Self {
        Self {
            base_lr: 1e-3,
            warmup_steps: (total_steps / 20).max(1),
            total_steps,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed,
            clip: None,
        }
    }

    /// Full-scale preset: lr 1e-5, batch 1024, 100k steps, warmup of ten
    /// passes over a file of `train_examples`.
    pub fn full_scale(seed: u64, train_examples: usize) -> Self {
        let batch_size = 1024;
        Self {
            base_lr: 1e-5,
            warmup_steps: warmup_from_epochs(10.0, train_examples, batch_size),
            total_steps: 100_000,
            batch_size,
            adam: AdamConfig::default(),
            seed,
            clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        if self.total_steps <= self.warmup_steps {
            return Err(Error::Contract(format!(
                "{} steps do not exceed {} warmup steps",
                self.total_steps, self.warmup_steps
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Contract(format!("learning rate {}", self.base_lr)));
        }
        Ok(())
    }
}

/// Steps covering `epochs` passes over `examples` at `batch` per step.
pub fn warmup_from_epochs(epochs: f64, examples: usize, batch: usize) -> usize {
    ((epochs * examples as f64) / batch.max(1) as f64).ceil() as usize
}

/// Linear ramp from 0 to the base rate over the warmup, then one cosine
/// half-cycle down to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let step = step.min(cfg.total_steps);
    if step <= cfg.warmup_steps {
        return cfg.base_lr * step as f64 / cfg.warmup_steps.max(1) as f64;
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moments per parameter, with the number of updates each
/// tensor has received.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R: Real = f64> {
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
    pub steps: Vec<u64>,
}

impl<R: Real> AdamState<R> {
    pub fn for_model(model: &Model<R>) -> Self {
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        Self {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            steps: vec![0; shapes.len()],
        }
    }
}

/// One bias-corrected Adam step on every parameter with `active[i]` set.
pub fn adam_update<R: Real>(
    params: &mut [(String, &mut Tensor<R>)],
    grads: &[(String, Tensor<R>)],
    state: &mut AdamState<R>,
    active: &[bool],
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || active.len() != params.len() {
        return Err(Error::Dimension(format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    for ((name, g), &on) in grads.iter().zip(active) {
        if on && !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let (b1, b2) = (R::c(cfg.beta1), R::c(cfg.beta2));
    let (one, eps) = (R::one(), R::c(cfg.eps));
    for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads).enumerate() {
        if !active[i] {
            continue;
        }
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!("gradient shape {:?} for {:?}", g.shape(), p.shape())));
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = R::c(lr);
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

fn clip_gradients<R: Real>(grads: &mut [(String, Tensor<R>)], max_norm: f64) {
    let norm = grads.iter().map(|(_, g)| g.data().iter().map(|x| x.f64() * x.f64()).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = R::c(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub head: HeadId,
    pub loss: f64,
    pub lr: f64,
    pub wallclock: f64,
}

pub const METRICS_HEADER: &str = "step,task,loss,lr,wallclock";

impl MetricRow {
    pub fn csv(&self) -> String {
        format!("{},{},{:.17e},{:.17e},{:.3}", self.step, self.head, self.loss, self.lr, self.wallclock)
    }
}

/// Appends rows to a metrics CSV, writing the header for a new file.
pub fn append_metrics(path: &std::path::Path, rows: &[MetricRow]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::io::BufWriter::new(std::fs::OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    f.flush()?;
    Ok(())
}

/// Checks that a dataset can drive `model` and returns its examples.
pub fn check_dataset<'a, R: Real>(data: &'a Dataset, model: &Model<R>) -> Result<&'a [EncodedExample]> {
    let table = data.header.token_table();
    if table.vocab_size() != model.config.vocab {
        return Err(Error::Vocab(format!(
            "{} dataset has {} ids, model has {}",
            table.version(),
            table.vocab_size(),
            model.config.vocab
        )));
    }
    check_examples(&data.examples, &table, model)?;
    Ok(&data.examples)
}

fn check_examples<R: Real>(examples: &[EncodedExample], table: &TokenTable, model: &Model<R>) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    for ex in examples {
        if ex.task.family() != table.family {
            return Err(Error::Vocab(format!("task `{}` in a {} dataset", ex.task, table.version())));
        }
        let item = ex.loss_item();
        if item.tokens.len() > model.config.context_length {
            return Err(Error::Capacity(format!("example of {} positions", item.tokens.len())));
        }
        if model.config.softmax_mode == SoftmaxMode::Tempered && ex.n_input < 2 {
            return Err(Error::Domain("tempered softmax needs inputs of length ≥ 2".into()));
        }
    }
    Ok(())
}

/// Training state: model, optimizer, sampler and step counter.
#[derive(Clone, Debug)]
pub struct Trainer<R: Real = f64> {
    pub model: Model<R>,
    pub optimizer: AdamState<R>,
    pub config: TrainConfig,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl<R: Real> Trainer<R> {
    pub fn new(model: Model<R>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamState::for_model(&model);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { model, optimizer, config, step: 0, rng })
    }

    pub fn from_checkpoint(ckpt: Checkpoint<R>) -> Result<Self> {
        ckpt.config.validate()?;
        Ok(Self { model: ckpt.model, optimizer: ckpt.optimizer, config: ckpt.config, step: ckpt.step, rng: ckpt.rng.restore() })
    }

    pub fn checkpoint(&self) -> Checkpoint<R> {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            config: self.config.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
        }
    }

    /// Head trained by update number `step` (1-based).
    pub fn head_for(step: usize, multitask: bool) -> HeadId {
        if multitask && step % 2 == 0 {
            HeadId::Aux
        } else {
            HeadId::Main
        }
    }

    /// One update on a batch drawn from `main`, or from `aux` on even steps
    /// when an auxiliary set is given.
    pub fn step_once(&mut self, main: &[EncodedExample], aux: Option<&[EncodedExample]>) -> Result<MetricRow> {
        let step = self.step + 1;
        let head = Self::head_for(step, aux.is_some());
        let data = match head {
            HeadId::Main => main,
            HeadId::Aux => aux.expect("aux head only with aux data"),
        };
        if data.is_empty() {
            return Err(Error::Contract("empty training set".into()));
        }
        let items: Vec<LossItem<'_>> =
            (0..self.config.batch_size).map(|_| data[self.rng.gen_range(0..data.len())].loss_item()).collect();
        let (loss, mut grads) = self.model.loss_and_gradients(&items, head)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        let other = match head {
            HeadId::Main => HeadId::Aux,
            HeadId::Aux => HeadId::Main,
        };
        let active: Vec<bool> = grads.iter().map(|(n, _)| !is_head_param(n, other)).collect();
        if let Some(c) = self.config.clip {
            clip_gradients(&mut grads, c);
        }
        let lr = lr_at(step, &self.config);
        let mut params = self.model.params_mut();
        adam_update(&mut params, &grads, &mut self.optimizer, &active, lr, &self.config.adam)?;
        self.step = step;
        Ok(MetricRow { step, head, loss, lr, wallclock: 0.0 })
    }

    /// Runs until `until` updates (capped at the configured total), calling
    /// `on_step` after each. Wallclock is recorded unless `deterministic`.
    pub fn run(
        &mut self,
        main: &[EncodedExample],
        aux: Option<&[EncodedExample]>,
        until: usize,
        deterministic: bool,
        mut on_step: impl FnMut(&Self, &MetricRow) -> Result<()>,
    ) -> Result<Vec<MetricRow>> {
        let start = Instant::now();
        let mut rows = Vec::new();
        while self.step < until.min(self.config.total_steps) {
            let mut row = self.step_once(main, aux)?;
            if !deterministic {
                row.wallclock = start.elapsed().as_secs_f64();
            }
            on_step(self, &row)?;
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Desk-scale model: depth 2, d = 64, four heads, MLP width 128,
/// context 32 (room for length-12 instances).
pub fn desk_model_config(vocab: usize, softmax_mode: SoftmaxMode) -> ModelConfig {
    ModelConfig {
        depth: 2,
        d: 64,
        heads: 4,
        d_mlp: 128,
        vocab,
        activation: Activation::Gelu,
        softmax_mode,
        context_length: 32,
        positional_embeddings: PositionalEmbeddings::None,
    }
}

/// Desk-scale sorting mixture: numbers 1..=20, lengths 2..=5 holding 80% of
/// the mass and 6..=8 the rest.
pub fn desk_gen_config(seed: u64, count: usize) -> GenConfig {
    GenConfig {
        values: (1, 20),
        lengths: LengthSpec { head: (2, 5), tail: (6, 8), head_mass: 0.8 },
        ..GenConfig::sorting(seed, count)
    }
}

/// Trains `model` from scratch for the configured number of steps.
pub fn train<R: Real>(
    main: &Dataset,
    aux: Option<&Dataset>,
    model: Model<R>,
    config: TrainConfig,
) -> Result<(Checkpoint<R>, Vec<MetricRow>)> {
    let main_ex = check_dataset(main, &model)?;
    let aux_ex = aux.map(|a| check_dataset(a, &model)).transpose()?;
    let mut trainer = Trainer::new(model, config)?;
    let total = trainer.config.total_steps;
    let rows = trainer.run(main_ex, aux_ex, total, true, |_, _| Ok(()))?;
    Ok((trainer.checkpoint(), rows))
}
