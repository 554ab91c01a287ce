//! Greedy-decode evaluation: full-sequence accuracy and mean edit distance
//! per test suite.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::datagen::{
    encode_all, gen_fixed_length_set, gen_rep_test_set, EncodedExample, RawExample, RepTestConfig,
    Task, TokenTable, DELIM_ID,
};
use crate::error::{Error, Result};
use crate::model::{greedy_decode, SequenceModel};

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Greedy output of `model` on one example and its expected output.
pub fn decode_example<M: SequenceModel + ?Sized>(model: &M, ex: &EncodedExample) -> Result<(Vec<u32>, Vec<u32>)> {
    let expected = ex.expected().to_vec();
    let got = greedy_decode(model, ex.prompt(), expected.len())?;
    Ok((got, expected))
}

fn check_vocab<M: SequenceModel + ?Sized>(model: &M, table: &TokenTable) -> Result<()> {
    if model.vocab_size() != table.vocab_size() {
        return Err(Error::Vocab(format!(
            "model scores {} ids, {} table has {}",
            model.vocab_size(),
            table.version(),
            table.vocab_size()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub tag: String,
    pub n_examples: usize,
    pub full_seq_acc: f64,
    pub mean_edit_distance: f64,
}

/// Both metrics of `model` over `examples`.
pub fn evaluate_examples<M: SequenceModel + ?Sized>(model: &M, tag: &str, examples: &[EncodedExample]) -> Result<EvalRow> {
    if examples.is_empty() {
        return Err(Error::Contract(format!("suite `{tag}` is empty")));
    }
    let table = TokenTable::for_family(examples[0].task.family());
    check_vocab(model, &table)?;
    let scores: Vec<Result<(bool, usize)>> = examples
        .par_iter()
        .map(|ex| {
            let (got, want) = decode_example(model, ex)?;
            Ok((got == want, edit_distance(&got, &want)))
        })
        .collect();
    let (mut hits, mut dist) = (0usize, 0usize);
    for s in scores {
        let (ok, d) = s?;
        hits += usize::from(ok);
        dist += d;
    }
    let n = examples.len();
    Ok(EvalRow {
        tag: tag.to_string(),
        n_examples: n,
        full_seq_acc: hits as f64 / n as f64,
        mean_edit_distance: dist as f64 / n as f64,
    })
}

pub fn full_sequence_accuracy<M: SequenceModel + ?Sized>(model: &M, examples: &[EncodedExample]) -> Result<f64> {
    Ok(evaluate_examples(model, "all", examples)?.full_seq_acc)
}

/// A sorting test suite: uniform inputs of one length or `rep(i, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Length(usize),
    Rep { i: usize, r: usize },
}

impl Suite {
    pub fn tag(&self) -> String {
        match self {
            Suite::Length(n) => n.to_string(),
            Suite::Rep { i, r } => format!("rep({i},{r})"),
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            Suite::Length(n) | Suite::Rep { i: n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Seed of this suite's examples; stable under reordering of a list.
    pub fn seed(&self, base: u64) -> u64 {
        let key = match *self {
            Suite::Length(n) => n as u64,
            Suite::Rep { i, r } => ((i as u64) << 20) | r as u64,
        };
        base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(key)
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    /// `12` or `rep(10,3)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Contract(format!("bad suite `{s}`; expected a length or rep(i,r)"));
        if let Some(inner) = s.strip_prefix("rep(").and_then(|r| r.strip_suffix(')')) {
            let (i, r) = inner.split_once(',').ok_or_else(bad)?;
            return Ok(Suite::Rep { i: i.trim().parse().map_err(|_| bad())?, r: r.trim().parse().map_err(|_| bad())? });
        }
        s.parse().map(Suite::Length).map_err(|_| bad())
    }
}

/// Splits `10,12,rep(10,3)` at commas outside parentheses.
pub fn parse_suites(list: &str) -> Result<Vec<Suite>> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in list.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(list[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !list[start..].trim().is_empty() {
        out.push(list[start..].parse()?);
    }
    Ok(out)
}

/// Examples of `suite` over numbers in `values`, seeded per suite.
pub fn suite_examples(suite: Suite, count: usize, values: (u32, u32), seed: u64, context: usize) -> Result<Vec<EncodedExample>> {
    let raws = match suite {
        Suite::Length(n) => gen_fixed_length_set(Task::Sort, n, count, values, seed)?,
        Suite::Rep { i, r } => gen_rep_test_set(&RepTestConfig { i, r, count }, values, seed)?,
    };
    encode_all(&raws, &TokenTable::SORTING, context)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub seed: u64,
    pub count: usize,
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str = "tag,n_examples,full_seq_acc,mean_edit_distance";

impl EvalReport {
    pub fn row(&self, tag: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.tag == tag)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# model: {}\n# seed: {}\n# count: {}\n{REPORT_HEADER}\n", self.model_id, self.seed, self.count);
        for r in &self.rows {
            let tag = if r.tag.contains(',') { format!("\"{}\"", r.tag) } else { r.tag.clone() };
            s.push_str(&format!("{tag},{},{:.6},{:.6}\n", r.n_examples, r.full_seq_acc, r.mean_edit_distance));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Per-suite sorting metrics.
pub fn evaluate_lengths<M: SequenceModel + ?Sized>(
    model: &M,
    model_id: &str,
    suites: &[Suite],
    per_length_count: usize,
    values: (u32, u32),
    seed: u64,
) -> Result<EvalReport> {
    check_vocab(model, &TokenTable::SORTING)?;
    let mut rows = Vec::with_capacity(suites.len());
    for &suite in suites {
        let needed = 2 * suite.len() + 1;
        if needed > model.context_length() {
            return Err(Error::Capacity(format!("suite {} needs {needed} positions", suite.tag())));
        }
        let ex = suite_examples(suite, per_length_count, values, suite.seed(seed), model.context_length())?;
        rows.push(evaluate_examples(model, &suite.tag(), &ex)?);
    }
    Ok(EvalReport { model_id: model_id.to_string(), seed, count: per_length_count, rows })
}

/// Per-length increment accuracy on uniform `len`-digit numbers; the
/// decode length is the true output length, so overflow digits count.
pub fn evaluate_increment<M: SequenceModel + ?Sized>(
    model: &M,
    model_id: &str,
    lengths: &[usize],
    count: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_vocab(model, &TokenTable::INCREMENT)?;
    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let raws = gen_fixed_length_set(Task::Increment, len, count, (1, 9), Suite::Length(len).seed(seed))?;
        let ex = encode_all(&raws, &TokenTable::INCREMENT, 2 * len + 2)?;
        rows.push(evaluate_examples(model, &len.to_string(), &ex)?);
    }
    Ok(EvalReport { model_id: model_id.to_string(), seed, count, rows })
}

/// Answers increment prompts from the digits before ⊥.
#[derive(Clone, Copy, Debug, Default)]
pub struct IncrementOracle;

impl SequenceModel for IncrementOracle {
    fn vocab_size(&self) -> usize {
        TokenTable::INCREMENT.vocab_size()
    }

    fn context_length(&self) -> usize {
        usize::MAX
    }

    fn next_logits(&self, prefix: &[u32], n_input: usize) -> Result<Vec<f64>> {
        let table = TokenTable::INCREMENT;
        if prefix.get(n_input) != Some(&DELIM_ID) {
            return Err(Error::Contract(format!("expected ⊥ after {n_input} digits")));
        }
        let digits = prefix[..n_input]
            .iter()
            .map(|&id| table.value_of(id).ok_or(Error::UnknownToken(id)))
            .collect::<Result<Vec<_>>>()?;
        let answer = RawExample::increment(&digits).answer_values();
        let k = prefix.len() - n_input - 1;
        let id = answer.get(k).map_or(DELIM_ID, |&d| table.value_id(d));
        let mut logits = vec![0.0; self.vocab_size()];
        logits[id as usize] = 1.0;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests;
