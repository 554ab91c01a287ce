use rayon::prelude::*;

use super::{HeadId, Model, SoftmaxMode};
use crate::error::{Error, Result};
use crate::numerics::{AttentionLayout, Real, Segment, Tape, Tensor, Var};

/// One training sequence: `targets[i]` is the token expected after
/// position `i`, scored only where `mask[i]` is set.
#[derive(Clone, Copy, Debug)]
pub struct LossItem<'a> {
    pub tokens: &'a [u32],
    pub targets: &'a [u32],
    pub mask: &'a [bool],
    pub n_input: usize,
}

/// Sequences per tape. Gradients are summed chunk by chunk in index order,
/// so the result does not depend on the thread count.
const CHUNK: usize = 8;

impl<R: Real> Model<R> {
    /// Registers the parameters on `tape` in [`Model::params`] order.
    pub(crate) fn register(&self, tape: &mut Tape<R>) -> Vec<Var> {
        self.params().into_iter().map(|(name, value)| tape.param(name, value.clone())).collect()
    }

    /// Records the batched forward pass of `items` and returns the logits
    /// node. `vars` holds one handle per parameter in [`Model::params`] order.
    pub fn record(&self, tape: &mut Tape<R>, vars: &[Var], items: &[LossItem<'_>], head: HeadId) -> Result<Var> {
        let names = self.params();
        if names.len() != vars.len() {
            return Err(Error::Dimension(format!("{} handles for {} parameters", vars.len(), names.len())));
        }
        let lookup: std::collections::HashMap<String, Var> =
            names.into_iter().map(|(n, _)| n).zip(vars.iter().copied()).collect();
        let get = |n: &str| lookup[n];

        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(items.len());
        for item in items {
            self.check_tokens(item.tokens)?;
            segments.push(Segment { start: ids.len(), len: item.tokens.len(), temper: 1.0 });
            ids.extend(item.tokens.iter().map(|&t| t as usize));
        }
        let tempered = self.config.softmax_mode == SoftmaxMode::Tempered;
        if tempered {
            for (seg, item) in segments.iter_mut().zip(items) {
                if item.n_input < 2 {
                    return Err(Error::Domain(format!("tempered softmax needs n ≥ 2, got {}", item.n_input)));
                }
                seg.temper = (item.n_input as f64).ln();
            }
        }
        let layout = AttentionLayout { segments, heads: self.config.heads, scale: self.config.score_scale() };

        let mut x = tape.gather_rows(get("embedding"), &ids)?;
        for j in 0..self.config.depth {
            let p = |n: &str| get(&format!("blocks.{j}.{n}"));
            let q = tape.matmul(x, p("wq"))?;
            let k = tape.matmul(x, p("wk"))?;
            let v = tape.matmul(x, p("wv"))?;
            let beta = tempered.then(|| p("beta"));
            let attn = tape.causal_attention(q, k, v, beta, &layout)?;
            let y = tape.add(x, attn)?;
            let h = tape.matmul(y, p("w1"))?;
            let h = tape.add_bias(h, p("b1"))?;
            let h = tape.activation(h, self.config.activation);
            let m = tape.matmul(h, p("w2"))?;
            let m = tape.add_bias(m, p("b2"))?;
            let z = tape.add(y, m)?;
            x = tape.layer_norm_rows(z);
        }
        let hname = head.name();
        let logits = tape.matmul(x, get(&format!("heads.{hname}.w")))?;
        let logits = tape.add_bias(logits, get(&format!("heads.{hname}.b")))?;
        Ok(logits)
    }

    /// Weights and targets for [`Tape::cross_entropy`] over a chunk.
    pub(crate) fn loss_rows(items: &[LossItem<'_>], weight: R) -> (Vec<usize>, Vec<R>) {
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for item in items {
            for (&t, &m) in item.targets.iter().zip(item.mask) {
                targets.push(if m { t as usize } else { 0 });
                weights.push(if m { weight } else { R::zero() });
            }
        }
        (targets, weights)
    }

    /// Mean masked cross-entropy over the batch and its gradient with respect
    /// to every parameter in [`Model::params`] order.
    pub fn loss_and_gradients(&self, items: &[LossItem<'_>], head: HeadId) -> Result<(f64, Vec<(String, Tensor<R>)>)> {
        let mut total = 0usize;
        for item in items {
            if item.targets.len() != item.tokens.len() || item.mask.len() != item.tokens.len() {
                return Err(Error::Dimension("tokens, targets and mask differ in length".into()));
            }
            total += item.mask.iter().filter(|&&m| m).count();
        }
        if total == 0 {
            return Err(Error::Contract("loss mask selects no positions".into()));
        }
        let weight = R::c(1.0 / total as f64);
        let chunks: Vec<&[LossItem<'_>]> = items.chunks(CHUNK).collect();
        let parts: Vec<Result<(R, Vec<(String, Tensor<R>)>)>> = chunks
            .par_iter()
            .map(|chunk| {
                let mut tape = Tape::new();
                let vars = self.register(&mut tape);
                let logits = self.record(&mut tape, &vars, chunk, head)?;
                let (targets, weights) = Self::loss_rows(chunk, weight);
                let loss = tape.cross_entropy(logits, &targets, &weights)?;
                let value = tape.value(loss).item();
                Ok((value, tape.backward(loss)?.into_params()))
            })
            .collect();
        let mut loss = R::zero();
        let mut grads: Option<Vec<(String, Tensor<R>)>> = None;
        for part in parts {
            let (l, g) = part?;
            loss = loss + l;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for ((_, a), (_, b)) in acc.iter_mut().zip(&g) {
                        a.add_assign(b);
                    }
                }
            }
        }
        let loss = loss.f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss {loss}")));
        }
        Ok((loss, grads.unwrap_or_default()))
    }
}
