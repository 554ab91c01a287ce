use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::atlas::{BasisAtlas, Family};
use super::build::{build_construction, ConstructionConfig, ConstructionModel};
use super::engine::{construction_sort_traced, oracle_sort, ConstructionTrace};
use crate::error::{Error, Result};

/// Noise budget for stage checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ToleranceConfig {
    pub noise: f64,
}

impl ToleranceConfig {
    /// `10/n²`.
    pub fn for_length(n: usize) -> Self {
        Self { noise: 10.0 / (n as f64 * n as f64) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Copy,
    Min,
    IdentitySuccessor,
    Denoise,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Copy => "copy",
            Stage::Min => "min",
            Stage::IdentitySuccessor => "identity_successor",
            Stage::Denoise => "denoise",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageCheck {
    pub position: usize,
    pub stage: Stage,
    /// Top symbols, as many as expected.
    pub winner: Vec<u32>,
    pub expected: Vec<u32>,
    /// Smallest expected score minus the largest other score.
    pub margin: f64,
    /// Total absolute projection on symbols outside the stage's support.
    pub residual: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub checks: Vec<StageCheck>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl StageReport {
    pub fn failures(&self) -> impl Iterator<Item = &StageCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn count(&self, stage: Stage) -> (usize, usize) {
        let of: Vec<_> = self.checks.iter().filter(|c| c.stage == stage).collect();
        (of.iter().filter(|c| c.pass).count(), of.len())
    }
}

/// Projection of `x` onto `Σ_f f_a` for each symbol `a = 1..=q`.
fn project(atlas: &BasisAtlas, x: &[f64], families: &[Family]) -> Vec<f64> {
    atlas.symbols().map(|a| families.iter().map(|&f| x[atlas.index(f, a)]).sum()).collect()
}

fn judge(
    position: usize,
    stage: Stage,
    proj: &[f64],
    expected: Vec<u32>,
    support: &[u32],
    tol: f64,
) -> StageCheck {
    let mut order: Vec<u32> = (1..=proj.len() as u32).collect();
    order.sort_by(|&a, &b| proj[b as usize - 1].total_cmp(&proj[a as usize - 1]).then(a.cmp(&b)));
    let k = expected.len();
    let mut winner = order[..k].to_vec();
    winner.sort_unstable();
    let lowest_expected = expected.iter().map(|&a| proj[a as usize - 1]).fold(f64::INFINITY, f64::min);
    let best_other = (1..=proj.len() as u32)
        .filter(|a| !expected.contains(a))
        .map(|a| proj[a as usize - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    let residual: f64 = (1..=proj.len() as u32)
        .filter(|a| !support.contains(a) && !expected.contains(a))
        .map(|a| proj[a as usize - 1].abs())
        .sum();
    let pass = winner == expected && lowest_expected > best_other && residual <= tol;
    StageCheck { position, stage, winner, expected, margin: lowest_expected - best_other, residual, pass }
}

/// Checks the four mechanism stages on the trace of
/// `seq, ⊥, oracle_sort(seq)[..n−1]`.
///
/// - copy, rows `i < n`: block-1 pre-MLP state in the encoder basis
///   `e_s + e′_s` peaks at `σ_i`;
/// - min, row `n`: block-1 pre-MLP state in the `ê′` basis peaks at the
///   minimum;
/// - identity+successor, rows `i > n`: block-2 pre-MLP state in the decoder
///   basis `ê_s + ê′_s` has top set `{σ_i, next output}`;
/// - denoise, rows `i ≥ n`: the final state decodes to the next output.
///
/// Residual mass counts symbols outside the state the construction writes
/// on purpose: the expected symbols plus, for rows after ⊥, the support of
/// the ε-weighted successor term (the strict successor of `σ_i`, or every
/// input symbol when `σ_i` is the input maximum).
pub fn verify_stages(
    atlas: &BasisAtlas,
    trace: &ConstructionTrace,
    seq: &[u32],
    tol: ToleranceConfig,
) -> Result<StageReport> {
    let n = seq.len();
    if trace.len() != 2 * n || trace.pre[0].iter().any(|r| r.len() != atlas.dim()) {
        return Err(Error::Dimension(format!(
            "trace of {} rows (width {}) for n = {n} over d = {}",
            trace.len(),
            trace.pre[0].first().map_or(0, Vec::len),
            atlas.dim()
        )));
    }
    let sorted = oracle_sort(seq);
    let tokens: Vec<u32> = seq.iter().copied().chain([0]).chain(sorted[..n - 1].iter().copied()).collect();
    let max = *sorted.last().unwrap_or(&0);
    let designed = |i: usize| -> Vec<u32> {
        if i == n {
            return vec![];
        }
        let a = tokens[i];
        match sorted.iter().find(|&&b| b > a) {
            Some(&succ) => vec![succ],
            None if a == max => seq.to_vec(),
            None => vec![],
        }
    };
    let decode = [Family::Hat, Family::HatPrime];
    let mut checks = Vec::with_capacity(4 * n);
    for (i, &s) in seq.iter().enumerate() {
        let proj = project(atlas, &trace.pre[0][i], &[Family::E, Family::EPrime]);
        checks.push(judge(i, Stage::Copy, &proj, vec![s], &[], tol.noise));
    }
    let proj = project(atlas, &trace.pre[0][n], &[Family::HatPrime]);
    checks.push(judge(n, Stage::Min, &proj, vec![sorted[0]], &[], tol.noise));
    for i in n + 1..2 * n {
        let mut expected = vec![tokens[i], sorted[i - n]];
        expected.sort_unstable();
        expected.dedup();
        let proj = project(atlas, &trace.pre[1][i], &decode);
        checks.push(judge(i, Stage::IdentitySuccessor, &proj, expected, &designed(i), tol.noise));
    }
    for i in n..2 * n {
        let support: Vec<u32> = designed(i).into_iter().chain((i > n).then_some(tokens[i])).collect();
        let proj = project(atlas, &trace.post[1][i], &decode);
        checks.push(judge(i, Stage::Denoise, &proj, vec![sorted[i - n]], &support, tol.noise));
    }
    let max_residual = checks.iter().map(|c| c.residual).fold(0.0, f64::max);
    let pass = checks.iter().all(|c| c.pass);
    Ok(StageReport { checks, max_residual, tolerance: tol.noise, pass })
}

fn join(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join("|")
}

pub const STAGE_CSV_HEADER: &str = "seq_id,position,stage,winner,expected,margin,pass";

/// Appends the rows of one report as CSV lines.
pub fn write_stage_rows<W: Write>(out: &mut W, seq_id: usize, report: &StageReport) -> std::io::Result<()> {
    for c in &report.checks {
        writeln!(
            out,
            "{seq_id},{},{},{},{},{:.6e},{}",
            c.position,
            c.stage,
            join(&c.winner),
            join(&c.expected),
            c.margin,
            c.pass
        )?;
    }
    Ok(())
}

/// Outcome of one sequence in a verification suite.
#[derive(Clone, Debug)]
pub struct SequenceOutcome {
    pub seq: Vec<u32>,
    pub output: Vec<u32>,
    pub sorted_ok: bool,
    pub stages: Option<StageReport>,
}

/// Sorts every sequence (all of length `cfg.n`) and optionally verifies the
/// stages. Results keep the input order.
pub fn run_suite(cfg: &ConstructionConfig, seqs: &[Vec<u32>], with_stages: bool) -> Result<Vec<SequenceOutcome>> {
    let model = build_construction(cfg.clone())?;
    run_suite_on(&model, seqs, with_stages)
}

pub fn run_suite_on(model: &ConstructionModel, seqs: &[Vec<u32>], with_stages: bool) -> Result<Vec<SequenceOutcome>> {
    let tol = ToleranceConfig::for_length(model.config.n);
    let with_stages = with_stages && !model.is_doubled();
    seqs.par_iter()
        .map(|seq| {
            let (output, trace) = construction_sort_traced(model, seq, with_stages)?;
            let sorted_ok = output == oracle_sort(seq);
            let stages = match trace {
                Some(tr) => Some(verify_stages(&model.atlas, &tr, seq, tol)?),
                None => None,
            };
            Ok(SequenceOutcome { seq: seq.clone(), output, sorted_ok, stages })
        })
        .collect()
}

/// Sorting failures per candidate ε.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsSweepRow {
    pub eps: f64,
    pub failures: usize,
    pub total: usize,
}

/// Runs the suite under `ε = 1/4` and `ε = 1/(4(n+1))`.
pub fn eps_sweep(q: usize, n: usize, seqs: &[Vec<u32>]) -> Result<Vec<EpsSweepRow>> {
    [0.25, ConstructionConfig::default_eps(n)]
        .into_iter()
        .map(|eps| {
            let cfg = ConstructionConfig::new(q, n).with_eps(eps);
            let outcomes = run_suite(&cfg, seqs, true)?;
            let failures = outcomes
                .iter()
                .filter(|o| !o.sorted_ok || o.stages.as_ref().is_some_and(|s| !s.pass))
                .count();
            Ok(EpsSweepRow { eps, failures, total: seqs.len() })
        })
        .collect()
}
