use serde::{Deserialize, Serialize};

use super::atlas::{BasisAtlas, Family, DELIM};
use super::sparse::{SparseMap, SparseVec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LayerNormMode {
    #[default]
    Off,
    /// Appends a negated copy of every coordinate and normalizes after
    /// each block.
    Doubled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub q: usize,
    pub n: usize,
    /// Weight of `e_⊥` in the block-1 head-1 query.
    pub c: f64,
    /// Weight of the successor value in block-2 head 2.
    pub eps: f64,
    #[serde(default)]
    pub layernorm: LayerNormMode,
}

impl ConstructionConfig {
    /// Defaults: `C = 3`, `ε = 1/(4(n+1))`, no layer norm.
    pub fn new(q: usize, n: usize) -> Self {
        Self { q, n, c: 3.0, eps: Self::default_eps(n), layernorm: LayerNormMode::Off }
    }

    pub fn default_eps(n: usize) -> f64 {
        1.0 / (4.0 * (n as f64 + 1.0))
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_layernorm(mut self, mode: LayerNormMode) -> Self {
        self.layernorm = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::Contract(format!("alphabet size {} < 2", self.q)));
        }
        if self.n < 2 {
            return Err(Error::Contract(format!("input length {} < 2", self.n)));
        }
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return Err(Error::Contract(format!("ε = {} outside (0, 1/2]", self.eps)));
        }
        if !(self.c > 0.0) {
            return Err(Error::Contract(format!("C = {} must be positive", self.c)));
        }
        Ok(())
    }

    /// `τ = 3 ln n`.
    pub fn tau(&self) -> f64 {
        3.0 * (self.n as f64).ln()
    }

    /// `γ_b = q − b + 1`, decreasing in `b`.
    pub fn gamma(&self, b: u32) -> f64 {
        (self.q as f64) - b as f64 + 1.0
    }
}

/// One attention head as three sparse maps; scores are
/// `query_scale·τ·⟨Q x_i, K x_j⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionHead {
    pub q: SparseMap,
    pub k: SparseMap,
    pub v: SparseMap,
}

/// ReLU MLP with sparse units: unit `u` contributes
/// `relu(⟨w_u, x⟩ + b_u) · o_u`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SparseMlp {
    pub units: Vec<MlpUnit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpUnit {
    pub w: SparseVec,
    pub bias: f64,
    pub out: SparseVec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionBlock {
    pub heads: Vec<ConstructionHead>,
    pub mlp: SparseMlp,
    /// Extra factor on this block's scores.
    pub query_scale: f64,
    /// Layer norm after the block.
    pub normalize: bool,
}

/// The two-block sorting transformer over `d = 6(q+1)` coordinates, or
/// `2d` in the doubled layer-norm variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionModel {
    pub config: ConstructionConfig,
    pub atlas: BasisAtlas,
    pub dim: usize,
    pub blocks: Vec<ConstructionBlock>,
    /// Decoder direction per symbol `a ∈ 1..=q` (index `a−1`).
    pub decoder: Vec<SparseVec>,
}

fn unit_vec(pairs: &[(usize, f64)]) -> SparseVec {
    let mut v: Vec<(u32, f64)> = pairs.iter().map(|&(i, w)| (i as u32, w)).collect();
    v.sort_by_key(|p| p.0);
    v
}

pub fn build_construction(config: ConstructionConfig) -> Result<ConstructionModel> {
    config.validate()?;
    let atlas = BasisAtlas::new(config.q);
    let d = atlas.dim();
    let ix = |f: Family, s: u32| atlas.index(f, s);
    let symbols: Vec<u32> = atlas.symbols().collect();
    let all: Vec<u32> = std::iter::once(DELIM).chain(symbols.iter().copied()).collect();
    use Family::*;

    // Block 1, head 1: every input token finds ⊥ first (weight C), then itself.
    let mut q = vec![(ix(E, DELIM), ix(E, DELIM), 1.0)];
    for &a in &symbols {
        q.push((ix(E, a), ix(E, a), 1.0));
        q.push((ix(E, DELIM), ix(E, a), config.c));
    }
    let k: Vec<_> = all.iter().map(|&s| (ix(E, s), ix(E, s), 1.0)).collect();
    let v: Vec<_> = all.iter().map(|&s| (ix(Tilde, s), ix(E, s), 1.0)).collect();
    let b1h1 = ConstructionHead {
        q: SparseMap::from_entries(d, d, &q),
        k: SparseMap::from_entries(d, d, &k),
        v: SparseMap::from_entries(d, d, &v),
    };

    // Block 1, head 2: ⊥ attends to the minimum via γ_b; symbols to themselves.
    let mut q = Vec::new();
    let mut v = Vec::new();
    for &a in &symbols {
        q.push((ix(EPrime, a), ix(EPrime, a), 1.0));
        q.push((ix(EPrime, a), ix(EPrime, DELIM), config.gamma(a)));
        v.push((ix(HatPrime, a), ix(EPrime, a), 1.0));
    }
    let k: Vec<_> = all.iter().map(|&s| (ix(EPrime, s), ix(EPrime, s), 1.0)).collect();
    let b1h2 = ConstructionHead {
        q: SparseMap::from_entries(d, d, &q),
        k: SparseMap::from_entries(d, d, &k),
        v: SparseMap::from_entries(d, d, &v),
    };

    // Block 1 MLP: turn the ẽ summary into a signed ẽ′ flag.
    let mut units = Vec::with_capacity(3 * config.q);
    for &b in &symbols {
        units.push(MlpUnit {
            w: unit_vec(&[(ix(E, b), 1.0), (ix(Tilde, DELIM), 1.0)]),
            bias: -1.0,
            out: unit_vec(&[(ix(TildePrime, b), -1.0), (ix(Tilde, DELIM), -1.0)]),
        });
        units.push(MlpUnit {
            w: unit_vec(&[(ix(Tilde, b), 1.0)]),
            bias: 0.0,
            out: unit_vec(&[(ix(TildePrime, b), 1.0), (ix(Tilde, b), -1.0)]),
        });
        units.push(MlpUnit {
            w: unit_vec(&[(ix(Tilde, b), -1.0)]),
            bias: 0.0,
            out: unit_vec(&[(ix(TildePrime, b), -1.0), (ix(Tilde, b), 1.0)]),
        });
    }
    let block1 = ConstructionBlock {
        heads: vec![b1h1, b1h2],
        mlp: SparseMlp { units },
        query_scale: 1.0,
        normalize: false,
    };

    // Block 2, head 1: average the ẽ′ flags of equal symbols into ê.
    let qk: Vec<_> = all.iter().map(|&s| (ix(E, s), ix(E, s), 1.0)).collect();
    let v: Vec<_> = symbols.iter().map(|&a| (ix(Hat, a), ix(TildePrime, a), 1.0)).collect();
    let b2h1 = ConstructionHead {
        q: SparseMap::from_entries(d, d, &qk),
        k: SparseMap::from_entries(d, d, &qk),
        v: SparseMap::from_entries(d, d, &v),
    };

    // Block 2, head 2: each symbol attends to its strict successor.
    let mut q = vec![(ix(EPrime, DELIM), ix(EPrime, DELIM), 1.0)];
    let mut v = Vec::new();
    for &a in &symbols {
        for &b in symbols.iter().filter(|&&b| b > a) {
            q.push((ix(EPrime, b), ix(EPrime, a), config.gamma(b)));
        }
        v.push((ix(HatPrime, a), ix(EPrime, a), config.eps));
    }
    let k: Vec<_> = all.iter().map(|&s| (ix(EPrime, s), ix(EPrime, s), 1.0)).collect();
    let b2h2 = ConstructionHead {
        q: SparseMap::from_entries(d, d, &q),
        k: SparseMap::from_entries(d, d, &k),
        v: SparseMap::from_entries(d, d, &v),
    };

    // Block 2 MLP: cancel ê′_b wherever the ẽ′_b flag is negative.
    let units = symbols
        .iter()
        .map(|&b| MlpUnit {
            w: unit_vec(&[(ix(TildePrime, b), -1.0)]),
            bias: 0.0,
            out: unit_vec(&[(ix(HatPrime, b), -1.0)]),
        })
        .collect();
    let block2 = ConstructionBlock {
        heads: vec![b2h1, b2h2],
        mlp: SparseMlp { units },
        query_scale: 1.0,
        normalize: false,
    };

    let decoder = symbols.iter().map(|&a| unit_vec(&[(ix(Hat, a), 1.0), (ix(HatPrime, a), 1.0)])).collect();
    let base = ConstructionModel { config: config.clone(), atlas, dim: d, blocks: vec![block1, block2], decoder };
    Ok(match config.layernorm {
        LayerNormMode::Off => base,
        LayerNormMode::Doubled => doubled_layernorm_variant(&base),
    })
}

fn double_map(m: &SparseMap, d: usize, c: f64) -> SparseMap {
    // (x, −x) ↦ c·(Mx, −Mx) when each copy reads its own half.
    let mut entries = Vec::with_capacity(2 * m.nnz());
    for (o, i, w) in m.entries() {
        entries.push((o, i, c * w));
        entries.push((o + d, i + d, c * w));
    }
    SparseMap::from_entries(2 * d, 2 * d, &entries)
}

fn double_vec(v: &[(u32, f64)], d: usize, c: f64) -> SparseVec {
    let mut out: SparseVec = v.iter().map(|&(i, w)| (i, c * w)).collect();
    out.extend(v.iter().map(|&(i, w)| (i + d as u32, -c * w)));
    out
}

/// Embeds the construction in `2d` coordinates as `(x, −x)` and enables a
/// layer norm after both blocks.
///
/// Queries and MLP read-outs take half of each copy so scores and hidden
/// activations are unchanged. After block 1 every row has squared norm
/// close to 8, which the norm rescales to `2d`; block-2 queries are scaled
/// by `4/d` to undo the factor `d/4` this puts on its scores.
pub fn doubled_layernorm_variant(base: &ConstructionModel) -> ConstructionModel {
    let d = base.dim;
    let blocks = base
        .blocks
        .iter()
        .enumerate()
        .map(|(j, b)| ConstructionBlock {
            heads: b
                .heads
                .iter()
                .map(|h| ConstructionHead {
                    q: double_map(&h.q, d, 0.5),
                    k: double_map(&h.k, d, 1.0),
                    v: double_map(&h.v, d, 1.0),
                })
                .collect(),
            mlp: SparseMlp {
                units: b
                    .mlp
                    .units
                    .iter()
                    .map(|u| MlpUnit { w: double_vec(&u.w, d, 0.5), bias: u.bias, out: double_vec(&u.out, d, 1.0) })
                    .collect(),
            },
            query_scale: if j == 0 { b.query_scale } else { b.query_scale * 4.0 / d as f64 },
            normalize: true,
        })
        .collect();
    ConstructionModel {
        config: base.config.clone().with_layernorm(LayerNormMode::Doubled),
        atlas: base.atlas,
        dim: 2 * d,
        blocks,
        decoder: base.decoder.iter().map(|v| double_vec(v, d, 0.5)).collect(),
    }
}

impl ConstructionModel {
    /// Input embedding of a construction symbol.
    pub fn embed(&self, s: u32) -> Vec<f64> {
        let x = self.atlas.encode(s);
        match self.config.layernorm {
            LayerNormMode::Off => x,
            LayerNormMode::Doubled => x.iter().copied().chain(x.iter().map(|v| -v)).collect(),
        }
    }

    pub fn is_doubled(&self) -> bool {
        self.config.layernorm == LayerNormMode::Doubled
    }
}
