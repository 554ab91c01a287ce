//! Row-by-row execution of the construction.
//!
//! Each appended token runs through both blocks once; per-head key/value
//! caches make a full decode quadratic in the sequence length. Cached keys
//! that are bitwise identical share one group holding their count and
//! value sum, so softmax weights are `count·exp(s)` with exactly the same
//! normalization as attending to every copy.

use std::collections::HashMap;

use super::atlas::DELIM;
use super::build::{ConstructionBlock, ConstructionHead, ConstructionModel, SparseMlp};
use super::sparse::sparse_dot;
use crate::error::{Error, Result};
use crate::model::ActivationTrace;
use crate::numerics::{layer_norm, Tensor};

/// Keys and values of one head stored densely over the support of `K`
/// and `V`, one row per group of identical keys.
struct HeadCache {
    k_support: Vec<u32>,
    v_support: Vec<u32>,
    keys: Vec<f64>,
    values: Vec<f64>,
    counts: Vec<f64>,
    index: HashMap<Vec<u64>, usize>,
}

impl HeadCache {
    fn new(head: &ConstructionHead) -> Self {
        Self {
            k_support: head.k.support(),
            v_support: head.v.support(),
            keys: Vec::new(),
            values: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, key: &[f64], value: &[f64]) {
        let sig: Vec<u64> = key.iter().map(|v| v.to_bits()).collect();
        match self.index.get(&sig) {
            Some(&g) => {
                self.counts[g] += 1.0;
                let w = self.v_support.len();
                for (a, &b) in self.values[g * w..(g + 1) * w].iter_mut().zip(value) {
                    *a += b;
                }
            }
            None => {
                self.index.insert(sig, self.counts.len());
                self.counts.push(1.0);
                self.keys.extend_from_slice(key);
                self.values.extend_from_slice(value);
            }
        }
    }

    /// Adds the attention output for the full-width query `qv` onto `out`.
    fn attend(&self, qv: &[f64], factor: f64, scratch: &mut Scratch, out: &mut [f64]) {
        let (kw, vw) = (self.k_support.len(), self.v_support.len());
        scratch.query.clear();
        scratch.query.extend(self.k_support.iter().map(|&i| qv[i as usize] * factor));
        let qc = &scratch.query;
        let scores = &mut scratch.scores;
        scores.clear();
        if kw == 0 {
            scores.resize(self.counts.len(), 0.0);
        } else {
            scores.extend(self.keys.chunks_exact(kw).map(|k| k.iter().zip(qc).map(|(a, b)| a * b).sum::<f64>()));
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (s, &c) in scores.iter_mut().zip(&self.counts) {
            *s = (*s - max).exp();
            denom += c * *s;
        }
        let acc = &mut scratch.acc;
        acc.clear();
        acc.resize(vw, 0.0);
        if vw > 0 {
            for (&w, v) in scores.iter().zip(self.values.chunks_exact(vw)) {
                if w != 0.0 {
                    for (a, &x) in acc.iter_mut().zip(v) {
                        *a += w * x;
                    }
                }
            }
        }
        for (&i, &a) in self.v_support.iter().zip(acc.iter()) {
            out[i as usize] += a / denom;
        }
    }
}

#[derive(Default)]
struct Scratch {
    query: Vec<f64>,
    scores: Vec<f64>,
    acc: Vec<f64>,
    key: Vec<f64>,
    value: Vec<f64>,
}

fn apply_mlp(mlp: &SparseMlp, y: &[f64]) -> Vec<f64> {
    let mut z = y.to_vec();
    for u in &mlp.units {
        let h = (sparse_dot(y, &u.w) + u.bias).max(0.0);
        if h != 0.0 {
            for &(i, v) in &u.out {
                z[i as usize] += h * v;
            }
        }
    }
    z
}

/// Per-row states: pre-MLP and post-MLP embeddings of both blocks, the
/// latter taken before any layer norm.
#[derive(Clone, Debug, Default)]
pub struct ConstructionTrace {
    pub pre: [Vec<Vec<f64>>; 2],
    pub post: [Vec<Vec<f64>>; 2],
}

impl ConstructionTrace {
    pub fn len(&self) -> usize {
        self.pre[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_activation_trace(&self) -> ActivationTrace {
        let stack = |rows: &[Vec<f64>]| {
            let cols = rows.first().map_or(0, Vec::len);
            Tensor::matrix(rows.len(), cols, rows.concat()).expect("rows share a width")
        };
        ActivationTrace {
            pre: self.pre.iter().map(|r| stack(r)).collect(),
            post: self.post.iter().map(|r| stack(r)).collect(),
        }
    }
}

/// Incremental executor holding the key/value caches of one sequence.
pub struct Runner<'m> {
    model: &'m ConstructionModel,
    caches: Vec<Vec<HeadCache>>,
    tokens: Vec<u32>,
    last: Vec<f64>,
    trace: Option<ConstructionTrace>,
    scratch: Scratch,
    tau: f64,
}

impl<'m> Runner<'m> {
    pub fn new(model: &'m ConstructionModel, capture: bool) -> Self {
        let caches = model.blocks.iter().map(|b| b.heads.iter().map(HeadCache::new).collect()).collect();
        Self {
            model,
            caches,
            tokens: Vec::new(),
            last: Vec::new(),
            trace: capture.then(ConstructionTrace::default),
            scratch: Scratch::default(),
            tau: model.config.tau(),
        }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    fn run_block(&mut self, j: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let block: &ConstructionBlock = &self.model.blocks[j];
        for (h, head) in block.heads.iter().enumerate() {
            head.k.apply_compact(x, &mut self.scratch.key);
            head.v.apply_compact(x, &mut self.scratch.value);
            self.caches[j][h].insert(&self.scratch.key, &self.scratch.value);
        }
        let mut y = x.to_vec();
        let factor = block.query_scale * self.tau;
        for (h, head) in block.heads.iter().enumerate() {
            let qv = head.q.apply(x);
            self.caches[j][h].attend(&qv, factor, &mut self.scratch, &mut y);
        }
        let z = apply_mlp(&block.mlp, &y);
        let out = if block.normalize { layer_norm(&z) } else { z.clone() };
        (y, z, out)
    }

    /// Appends one token and runs its row through both blocks.
    pub fn push(&mut self, s: u32) -> Result<()> {
        if s as usize > self.model.config.q {
            return Err(Error::UnknownToken(s));
        }
        let x0 = self.model.embed(s);
        let (y1, z1, x1) = self.run_block(0, &x0);
        let (y2, z2, x2) = self.run_block(1, &x1);
        if let Some(tr) = self.trace.as_mut() {
            tr.pre[0].push(y1);
            tr.post[0].push(z1);
            tr.pre[1].push(y2);
            tr.post[1].push(z2);
        }
        self.last = x2;
        self.tokens.push(s);
        Ok(())
    }

    /// Decoder scores `⟨x, ê_a + ê′_a⟩` of the last row for `a = 1..=q`.
    pub fn scores(&self) -> Vec<f64> {
        self.model.decoder.iter().map(|dir| sparse_dot(&self.last, dir)).collect()
    }

    /// Highest-scoring symbol, ties to the smallest.
    pub fn predict(&self) -> u32 {
        let scores = self.scores();
        let mut best = 0;
        for (i, &v) in scores.iter().enumerate() {
            if v > scores[best] {
                best = i;
            }
        }
        best as u32 + 1
    }

    pub fn into_trace(self) -> Option<ConstructionTrace> {
        self.trace
    }
}

fn check_input(model: &ConstructionModel, seq: &[u32]) -> Result<()> {
    let cfg = &model.config;
    if seq.len() != cfg.n {
        return Err(Error::Malformed(format!("input of length {} for a model built with n = {}", seq.len(), cfg.n)));
    }
    if let Some(&bad) = seq.iter().find(|&&s| s == DELIM || s as usize > cfg.q) {
        return Err(Error::Malformed(format!("symbol {bad} outside 1..={}", cfg.q)));
    }
    Ok(())
}

/// Next-token prediction for `σ_0..σ_{n−1}, ⊥, o_1..o_i` with `i < n`,
/// together with the trace of every row.
pub fn construction_forward(model: &ConstructionModel, tokens: &[u32]) -> Result<(u32, ConstructionTrace)> {
    let n = model.config.n;
    if tokens.len() <= n || tokens[n] != DELIM {
        return Err(Error::Malformed(format!("expected ⊥ at position {n}")));
    }
    check_input(model, &tokens[..n])?;
    let outputs = &tokens[n + 1..];
    if outputs.len() >= n {
        return Err(Error::Malformed(format!("{} outputs for n = {n}", outputs.len())));
    }
    if let Some(&bad) = outputs.iter().find(|&&s| s == DELIM || s as usize > model.config.q) {
        return Err(Error::Malformed(format!("output symbol {bad}")));
    }
    let mut runner = Runner::new(model, true);
    for &t in tokens {
        runner.push(t)?;
    }
    let pred = runner.predict();
    Ok((pred, runner.into_trace().unwrap_or_default()))
}

/// Greedy autoregressive sort of `seq`, optionally tracing all `2n` rows.
pub fn construction_sort_traced(
    model: &ConstructionModel,
    seq: &[u32],
    capture: bool,
) -> Result<(Vec<u32>, Option<ConstructionTrace>)> {
    check_input(model, seq)?;
    let mut runner = Runner::new(model, capture);
    for &s in seq {
        runner.push(s)?;
    }
    runner.push(DELIM)?;
    let mut out = Vec::with_capacity(seq.len());
    for k in 0..seq.len() {
        let p = runner.predict();
        out.push(p);
        if k + 1 < seq.len() {
            runner.push(p)?;
        }
    }
    Ok((out, runner.into_trace()))
}

pub fn construction_sort(model: &ConstructionModel, seq: &[u32]) -> Result<Vec<u32>> {
    Ok(construction_sort_traced(model, seq, false)?.0)
}

/// Non-decreasing permutation of `seq`.
pub fn oracle_sort(seq: &[u32]) -> Vec<u32> {
    let mut v = seq.to_vec();
    v.sort_unstable();
    v
}

/// Occurrences of `a` in `seq[x..=y]`.
pub fn count_occurrences(seq: &[u32], a: u32, x: usize, y: usize) -> Result<usize> {
    if x > y || y >= seq.len() {
        return Err(Error::Range(format!("[{x}, {y}] in a sequence of length {}", seq.len())));
    }
    Ok(seq[x..=y].iter().filter(|&&s| s == a).count())
}
