//! Reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node holding its value, the ids of its inputs and a
//! closure mapping the output gradient to input gradients. Node ids are
//! assigned in creation order, so iterating them backwards is a valid
//! reverse topological order.

use super::kernels::{layer_norm_with_scale, softmax_in_place, Activation};
use super::tensor::{matmul, matmul_nt, matmul_tn, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<R> = Box<dyn Fn(&Tensor<R>, &[&Tensor<R>], &Tensor<R>) -> Vec<Option<Tensor<R>>>>;

struct Node<R: Real> {
    value: Tensor<R>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<R>>,
}

/// One contiguous sequence inside a batched attention call.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    /// Multiplier on the scores; with a learnable β the temperature is
    /// `β * temper`, otherwise it is `temper` itself.
    pub temper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    pub segments: Vec<Segment>,
    pub heads: usize,
    /// Constant factor applied to every dot product before tempering.
    pub scale: f64,
}

pub struct Tape<R: Real = f64> {
    nodes: Vec<Node<R>>,
    params: Vec<(String, Var)>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, inputs: Vec<Var>, backward: Option<BackwardFn<R>>) -> Var {
        self.nodes.push(Node { value, inputs, backward });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a reported gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// A leaf registered as a trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<R>) -> Var {
        let v = self.push(value, Vec::new(), None);
        self.params.push((name.into(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, ins, _| {
                vec![matmul_nt(g, ins[1]).ok(), matmul_tn(ins[0], g).ok()]
            })),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, vec![a, b], Some(Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]))))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, ins, _| {
                vec![g.zip_map(ins[1], |g, y| g * y).ok(), g.zip_map(ins[0], |g, x| g * x).ok()]
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, c: R) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, vec![a], Some(Box::new(move |g, _, _| vec![Some(g.scale(c))])))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let cols = xv.cols();
        if bv.numel() != cols {
            return Err(Error::Dimension(format!(
                "bias of length {} for rows of width {}",
                bv.numel(),
                cols
            )));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let bias_shape = bv.shape().to_vec();
        Ok(self.push(
            value,
            vec![x, bias],
            Some(Box::new(move |g, _, _| {
                let cols = g.cols();
                let mut gb = vec![R::zero(); cols];
                for r in 0..g.rows() {
                    for (acc, &v) in gb.iter_mut().zip(g.row(r)) {
                        *acc = *acc + v;
                    }
                }
                vec![Some(g.clone()), Tensor::new(bias_shape.clone(), gb).ok()]
            })),
        ))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let value = self.value(x).map(|v| act.apply(v));
        self.push(
            value,
            vec![x],
            Some(Box::new(move |g, ins, _| vec![g.zip_map(ins[0], |g, x| g * act.derivative(x)).ok()])),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<R>();
        self.push(
            Tensor::scalar(total),
            vec![x],
            Some(Box::new(|g, ins, _| vec![Some(Tensor::filled(ins[0].shape(), g.item()))])),
        )
    }

    /// Row-wise (untempered) softmax of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r), R::one());
        }
        self.push(
            value,
            vec![x],
            Some(Box::new(|g, _, y| {
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let dot: R = g.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                    for ((d, &gy), &yy) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = yy * (gy - dot);
                    }
                }
                vec![Some(dx)]
            })),
        )
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        let mut inv_scales = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let (normed, inv) = layer_norm_with_scale(xv.row(r));
            value.row_mut(r).copy_from_slice(&normed);
            inv_scales.push(inv);
        }
        self.push(
            value,
            vec![x],
            Some(Box::new(move |g, _, y| {
                let mut dx = g.clone();
                let d = R::c(y.cols() as f64);
                for (r, &inv) in inv_scales.iter().enumerate() {
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gr.iter().copied().sum::<R>() / d;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<R>() / d;
                    for ((o, &gi), &yi) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = inv * (gi - mean_g - yi * mean_gy);
                    }
                }
                vec![Some(dx)]
            })),
        )
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Range(format!("row {id} of a {rows}-row table")));
            }
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::matrix(ids.len(), cols, data)?;
        let ids = ids.to_vec();
        Ok(self.push(
            value,
            vec![table],
            Some(Box::new(move |g, ins, _| {
                let mut gt = Tensor::zeros(ins[0].shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o = *o + v;
                    }
                }
                vec![Some(gt)]
            })),
        ))
    }

    /// Weighted sum of per-row cross-entropies `Σ_i w_i·(logsumexp(l_i) − l_i[t_i])`.
    /// Rows with zero weight contribute nothing, including to gradients.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[R]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::Dimension(format!(
                "{} targets / {} weights for {} rows",
                targets.len(),
                weights.len(),
                rows
            )));
        }
        let mut probs = Tensor::zeros(&[rows, cols]);
        let mut total = R::zero();
        for r in 0..rows {
            if weights[r] == R::zero() {
                continue;
            }
            if targets[r] >= cols {
                return Err(Error::Range(format!("target {} for {} classes", targets[r], cols)));
            }
            let row = lv.row(r);
            let max = row.iter().fold(R::neg_infinity(), |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<R>().ln();
            total = total + weights[r] * (lse - row[targets[r]]);
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        Ok(self.push(
            Tensor::scalar(total),
            vec![logits],
            Some(Box::new(move |g, _, _| {
                let gs = g.item();
                let mut dl = probs.clone();
                for (r, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
                    let row = dl.row_mut(r);
                    if w == R::zero() {
                        continue;
                    }
                    row[t] = row[t] - R::one();
                    for v in row.iter_mut() {
                        *v = *v * w * gs;
                    }
                }
                vec![Some(dl)]
            })),
        ))
    }

    /// Batched multi-head causal attention with optional learnable temper β.
    ///
    /// `q`, `k`, `v` are `[N, d]`; head `h` uses columns `h*d/H..(h+1)*d/H`.
    /// Within each segment, row `i` attends to rows `j ≤ i` of the same
    /// segment with scores `scale·τ·⟨q_i, k_j⟩`. Heads are concatenated.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        beta: Option<Var>,
        layout: &AttentionLayout,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() {
            return Err(Error::Dimension("q, k, v shapes differ".into()));
        }
        if layout.heads == 0 || d % layout.heads != 0 {
            return Err(Error::Dimension(format!("{} heads over width {}", layout.heads, d)));
        }
        let covered: usize = layout.segments.iter().map(|s| s.len).sum();
        if covered != n || layout.segments.iter().any(|s| s.start + s.len > n) {
            return Err(Error::Dimension(format!("segments cover {covered} of {n} rows")));
        }
        let beta_value = match beta {
            Some(b) => Some(self.value(b).item()),
            None => None,
        };
        let hd = d / layout.heads;
        let mut out = Tensor::zeros(&[n, d]);
        let mut probs: Vec<Vec<R>> = Vec::with_capacity(layout.segments.len() * layout.heads);
        let mut taus = Vec::with_capacity(layout.segments.len());
        for seg in &layout.segments {
            let tau = beta_value.unwrap_or(R::one()) * R::c(seg.temper);
            if !(tau > R::zero()) {
                return Err(Error::Domain(format!("non-positive attention temperature {tau}")));
            }
            taus.push(tau);
            let factor = R::c(layout.scale) * tau;
            for h in 0..layout.heads {
                let cols = h * hd..(h + 1) * hd;
                let mut p = vec![R::zero(); seg.len * seg.len];
                for i in 0..seg.len {
                    let qi = &qv.row(seg.start + i)[cols.clone()];
                    let row = &mut p[i * seg.len..i * seg.len + i + 1];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kv.row(seg.start + j)[cols.clone()];
                        *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<R>() * factor;
                    }
                    softmax_in_place(row, R::one());
                    let orow = &mut out.row_mut(seg.start + i)[cols.clone()];
                    for (j, &w) in row.iter().enumerate() {
                        let vj = &vv.row(seg.start + j)[cols.clone()];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o = *o + w * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        let layout = layout.clone();
        let mut inputs = vec![q, k, v];
        if let Some(b) = beta {
            inputs.push(b);
        }
        Ok(self.push(
            out,
            inputs,
            Some(Box::new(move |g, ins, _| {
                let (qv, kv, vv) = (ins[0], ins[1], ins[2]);
                let mut dq = Tensor::zeros(qv.shape());
                let mut dk = Tensor::zeros(kv.shape());
                let mut dv = Tensor::zeros(vv.shape());
                let mut dbeta = R::zero();
                let mut ds = Vec::new();
                for (si, seg) in layout.segments.iter().enumerate() {
                    let tau = taus[si];
                    let factor = R::c(layout.scale) * tau;
                    for h in 0..layout.heads {
                        let cols = h * hd..(h + 1) * hd;
                        let p = &probs[si * layout.heads + h];
                        for i in 0..seg.len {
                            let gi = &g.row(seg.start + i)[cols.clone()];
                            let prow = &p[i * seg.len..i * seg.len + i + 1];
                            // dP_ij = <g_i, v_j>; dS_ij = P_ij (dP_ij - Σ P dP)
                            ds.clear();
                            let mut acc = R::zero();
                            for (j, &pij) in prow.iter().enumerate() {
                                let vj = &vv.row(seg.start + j)[cols.clone()];
                                let dp = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum::<R>();
                                acc = acc + pij * dp;
                                ds.push(dp);
                                let dvj = &mut dv.row_mut(seg.start + j)[cols.clone()];
                                for (o, &x) in dvj.iter_mut().zip(gi) {
                                    *o = *o + pij * x;
                                }
                            }
                            let qi: Vec<R> = qv.row(seg.start + i)[cols.clone()].to_vec();
                            for (j, &pij) in prow.iter().enumerate() {
                                let dsij = pij * (ds[j] - acc);
                                if dsij == R::zero() {
                                    continue;
                                }
                                let kj = &kv.row(seg.start + j)[cols.clone()];
                                if beta_value.is_some() {
                                    let raw = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<R>();
                                    dbeta = dbeta + dsij * raw * R::c(layout.scale * seg.temper);
                                }
                                let c = dsij * factor;
                                let dqi = &mut dq.row_mut(seg.start + i)[cols.clone()];
                                for (o, &x) in dqi.iter_mut().zip(kj) {
                                    *o = *o + c * x;
                                }
                                let dkj = &mut dk.row_mut(seg.start + j)[cols.clone()];
                                for (o, &x) in dkj.iter_mut().zip(&qi) {
                                    *o = *o + c * x;
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![Some(dq), Some(dk), Some(dv)];
                if beta_value.is_some() {
                    grads.push(Some(Tensor::scalar(dbeta)));
                }
                grads
            })),
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![R::one()])?);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(bw) = &node.backward {
                let ins: Vec<&Tensor<R>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let input_grads = bw(&g, &ins, &node.value);
                for (var, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    match &mut grads[var.0] {
                        Some(acc) => acc.add_assign(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        let params = self
            .params
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }
}

/// Result of one reverse pass. Holds exactly one gradient per registered
/// parameter (zero when the loss does not depend on it).
pub struct Gradients<R: Real = f64> {
    nodes: Vec<Option<Tensor<R>>>,
    params: Vec<(String, Tensor<R>)>,
}

impl<R: Real> Gradients<R> {
    pub fn of(&self, v: Var) -> Option<&Tensor<R>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<R>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn params(&self) -> &[(String, Tensor<R>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(String, Tensor<R>)> {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::scalar(3.0));
        let y = tape.param("y", Tensor::scalar(-2.0));
        let f = tape.mul(x, y).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.param("x").unwrap().item(), -2.0);
        assert_eq!(g.param("y").unwrap().item(), 3.0);
    }

    #[test]
    fn softmax_sum_is_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::matrix(1, 4, vec![0.3, -1.0, 2.0, 0.1]).unwrap());
        let s = tape.softmax_rows(x);
        let f = tape.sum(s);
        let g = tape.backward(f).unwrap();
        assert!(g.param("x").unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::scalar(1.0));
        let _unused = tape.param("w", Tensor::zeros(&[2, 3]));
        let f = tape.scale(x, 2.0);
        let g = tape.backward(f).unwrap();
        assert_eq!(g.params().len(), 2);
        assert_eq!(g.param("w").unwrap(), &Tensor::zeros(&[2, 3]));
    }
}
