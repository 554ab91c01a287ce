//! Encoder/decoder basis projections of hidden states and the min-finding
//! and Identity+Successor accuracies built on them.
//!
//! Depth indices are zero-based: depth `j` with [`Stage::Pre`] is the state
//! right after block `j`'s attention.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::{BasisAtlas, ConstructionDecoder, Family, Runner, DELIM};
use crate::datagen::{sorted, EncodedExample, TokenTable, DELIM_ID};
use crate::error::{Error, Result};
use crate::model::{ActivationTrace, HeadId, Model};
use crate::numerics::Real;

pub use report::{emit_projection_report, render_svg, PROJECTION_CSV_HEADER};

/// Encoder vectors (embedding rows) and decoder vectors (main-head
/// columns), one per vocabulary id.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisPair {
    pub encoder: Vec<Vec<f64>>,
    pub decoder: Vec<Vec<f64>>,
}

impl BasisPair {
    pub fn vocab(&self) -> usize {
        self.encoder.len()
    }

    pub fn get(&self, kind: BasisKind) -> &[Vec<f64>] {
        match kind {
            BasisKind::Encoder => &self.encoder,
            BasisKind::Decoder => &self.decoder,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Encoder,
    Decoder,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Encoder => "encoder",
            BasisKind::Decoder => "decoder",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(BasisKind::Encoder),
            "decoder" => Ok(BasisKind::Decoder),
            other => Err(Error::Contract(format!("unknown basis `{other}`"))),
        }
    }
}

/// Before or after a block's MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Post,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Post => "post",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(Stage::Pre),
            "post" => Ok(Stage::Post),
            other => Err(Error::Contract(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionProfile {
    pub position: usize,
    pub depth: usize,
    pub stage: Stage,
    pub basis: BasisKind,
    pub values: Vec<f64>,
}

/// `⟨x, b_k⟩` for every basis vector `b_k`.
pub fn project(x: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    basis.iter().map(|b| b.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

pub fn project_trace<R: Real>(
    trace: &ActivationTrace<R>,
    bases: &BasisPair,
    position: usize,
    depth: usize,
    stage: Stage,
    basis: BasisKind,
) -> Result<ProjectionProfile> {
    if depth >= trace.depth() {
        return Err(Error::Range(format!("depth {depth} of a {}-block trace", trace.depth())));
    }
    if position >= trace.positions() {
        return Err(Error::Range(format!("position {position} of {}", trace.positions())));
    }
    let row = match stage {
        Stage::Pre => trace.pre(position, depth),
        Stage::Post => trace.post(position, depth),
    };
    let x: Vec<f64> = row.iter().map(|v| v.f64()).collect();
    let b = bases.get(basis);
    if b.first().is_some_and(|v| v.len() != x.len()) {
        return Err(Error::Dimension(format!("basis of width {} for states of width {}", b[0].len(), x.len())));
    }
    Ok(ProjectionProfile { position, depth, stage, basis, values: project(&x, b) })
}

/// Largest `|cos|` between distinct vectors and the spread of lengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthogonalityReport {
    pub max_abs_cosine: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    /// `(max − min) / mean` of the vector lengths.
    pub length_spread: f64,
}

pub fn orthogonality_report(vectors: &[Vec<f64>]) -> Result<OrthogonalityReport> {
    if vectors.len() < 2 {
        return Err(Error::Contract("orthogonality needs at least two vectors".into()));
    }
    let norms: Vec<f64> = vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut max_abs_cosine = 0.0f64;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            max_abs_cosine = max_abs_cosine.max((dot / (norms[i] * norms[j])).abs());
        }
    }
    let min_norm = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let length_spread = if mean > 0.0 { (max_norm - min_norm) / mean } else { 0.0 };
    Ok(OrthogonalityReport { max_abs_cosine, min_norm, max_norm, length_spread })
}

/// Numerical rank of a family by modified Gram-Schmidt: vectors whose
/// residual norm falls below `tol` times their own norm add nothing.
pub fn span_rank(vectors: &[Vec<f64>], tol: f64) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for b in &basis {
            let c: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in r.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rn > tol * norm {
            basis.push(r.into_iter().map(|x| x / rn).collect());
        }
    }
    basis.len()
}

/// Anything whose hidden states can be probed over sorting token ids.
pub trait ProbeTarget: Sync {
    fn bases(&self) -> Result<BasisPair>;
    fn trace(&self, tokens: &[u32], n_input: usize) -> Result<ActivationTrace<f64>>;
}

/// Embedding rows and main-head columns of a trained model.
pub fn extract_bases<R: Real>(model: &Model<R>) -> Result<BasisPair> {
    let emb = &model.heads.embedding;
    let w = &model.heads.head(HeadId::Main).w;
    if w.rows() != model.config.d || w.cols() != model.config.vocab {
        return Err(Error::Dimension(format!("main head of shape {:?}", w.shape())));
    }
    let encoder = (0..emb.rows()).map(|i| emb.row(i).iter().map(|v| v.f64()).collect()).collect();
    let decoder = (0..w.cols()).map(|k| (0..w.rows()).map(|i| w.at(i, k).f64()).collect()).collect();
    Ok(BasisPair { encoder, decoder })
}

impl<R: Real> ProbeTarget for Model<R> {
    fn bases(&self) -> Result<BasisPair> {
        extract_bases(self)
    }

    fn trace(&self, tokens: &[u32], n_input: usize) -> Result<ActivationTrace<f64>> {
        let (_, trace) = self.embed(tokens, n_input, true)?;
        let trace = trace.expect("capture requested");
        Ok(ActivationTrace {
            pre: trace.pre.iter().map(|t| t.cast()).collect(),
            post: trace.post.iter().map(|t| t.cast()).collect(),
        })
    }
}

/// The construction over sorting ids: encoder vectors are `e_s + e′_s`,
/// decoder vectors `ê_a + ê′_a`; ids outside `⊥, 1..=q` get zero vectors.
impl ProbeTarget for ConstructionDecoder {
    fn bases(&self) -> Result<BasisPair> {
        let atlas = BasisAtlas::new(self.q);
        let vocab = TokenTable::SORTING.vocab_size();
        let mut encoder = vec![vec![0.0; atlas.dim()]; vocab];
        let mut decoder = encoder.clone();
        encoder[DELIM_ID as usize] = atlas.encode(DELIM);
        for a in 1..=self.q as u32 {
            let id = TokenTable::SORTING.value_id(a) as usize;
            encoder[id] = atlas.encode(a);
            decoder[id][atlas.index(Family::Hat, a)] = 1.0;
            decoder[id][atlas.index(Family::HatPrime, a)] = 1.0;
        }
        Ok(BasisPair { encoder, decoder })
    }

    fn trace(&self, tokens: &[u32], n_input: usize) -> Result<ActivationTrace<f64>> {
        let model = self.model_for(n_input)?;
        let mut runner = Runner::new(&model, true);
        for &id in tokens {
            let s = if id == DELIM_ID {
                DELIM
            } else {
                TokenTable::SORTING.value_of(id).filter(|&v| v as usize <= self.q).ok_or(Error::UnknownToken(id))?
            };
            runner.push(s)?;
        }
        Ok(runner.into_trace().unwrap_or_default().to_activation_trace())
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the two largest values, largest first.
fn top_two(values: &[f64]) -> (usize, usize) {
    let first = argmax(values);
    let mut second = usize::from(first == 0);
    for (i, &v) in values.iter().enumerate() {
        if i != first && v > values[second] {
            second = i;
        }
    }
    (first, second)
}

/// Whether the top of `profile` is `{current, next}`, or just `current`
/// when the two coincide.
pub fn identity_successor_hit(profile: &[f64], current: usize, next: usize) -> bool {
    let (a, b) = top_two(profile);
    if current == next {
        a == current
    } else {
        (a == current && b == next) || (a == next && b == current)
    }
}

pub fn min_hit(profile: &[f64], min_id: usize) -> bool {
    argmax(profile) == min_id
}

fn sort_inputs(dataset: &[EncodedExample]) -> Result<Vec<&[u32]>> {
    dataset
        .iter()
        .map(|ex| {
            if ex.task.family() != crate::datagen::TaskFamily::Sorting || ex.n_input < 2 {
                return Err(Error::Contract("probe metrics need sorting inputs of length ≥ 2".into()));
            }
            Ok(&ex.tokens[..ex.n_input])
        })
        .collect()
}

/// Fraction of examples whose ⊥ row, projected on the decoder basis at
/// `(depth, stage)`, peaks at the true minimum.
pub fn min_finding_accuracy<T: ProbeTarget + ?Sized>(
    target: &T,
    dataset: &[EncodedExample],
    depth: usize,
    stage: Stage,
) -> Result<f64> {
    let bases = target.bases()?;
    let inputs = sort_inputs(dataset)?;
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<Result<bool>> = inputs
        .par_iter()
        .map(|input| {
            let n = input.len();
            let mut tokens = input.to_vec();
            tokens.push(DELIM_ID);
            let trace = target.trace(&tokens, n)?;
            let p = project_trace(&trace, &bases, n, depth, stage, BasisKind::Decoder)?;
            Ok(min_hit(&p.values, *input.iter().min().expect("non-empty") as usize))
        })
        .collect();
    let hits = hits.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Fraction of output rows (after ⊥, teacher-forced with the sorted
/// sequence) whose decoder-basis top two are the current token and the
/// next sorted token.
pub fn identity_successor_accuracy<T: ProbeTarget + ?Sized>(
    target: &T,
    dataset: &[EncodedExample],
    depth: usize,
    stage: Stage,
) -> Result<f64> {
    let bases = target.bases()?;
    let inputs = sort_inputs(dataset)?;
    let per: Vec<Result<(usize, usize)>> = inputs
        .par_iter()
        .map(|input| {
            let n = input.len();
            let out = sorted(input);
            let mut tokens = input.to_vec();
            tokens.push(DELIM_ID);
            tokens.extend_from_slice(&out[..n - 1]);
            let trace = target.trace(&tokens, n)?;
            let mut hits = 0;
            for k in 0..n - 1 {
                let p = project_trace(&trace, &bases, n + 1 + k, depth, stage, BasisKind::Decoder)?;
                hits += usize::from(identity_successor_hit(&p.values, out[k] as usize, out[k + 1] as usize));
            }
            Ok((hits, n - 1))
        })
        .collect();
    let (mut hits, mut total) = (0, 0);
    for r in per {
        let (h, t) = r?;
        hits += h;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
