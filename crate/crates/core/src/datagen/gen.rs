use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokens::{Symbol, TaskFamily};
use crate::error::{Error, Result};

/// Two-tier uniform mixture over lengths: `head_mass` spread evenly on
/// `head`, the rest evenly on `tail`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSpec {
    pub head: (usize, usize),
    pub tail: (usize, usize),
    pub head_mass: f64,
}

impl LengthSpec {
    pub const SORTING: LengthSpec = LengthSpec { head: (2, 5), tail: (6, 20), head_mass: 0.8 };
    pub const INCREMENT: LengthSpec = LengthSpec { head: (2, 4), tail: (5, 10), head_mass: 0.8 };

    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (usize, usize)| lo >= 1 && lo <= hi;
        if !ok(self.head) || !ok(self.tail) {
            return Err(Error::Contract(format!("empty length range in {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.head_mass) {
            return Err(Error::Contract(format!("head mass {} outside [0, 1]", self.head_mass)));
        }
        Ok(())
    }

    /// Probability of drawing exactly `len`.
    pub fn probability(&self, len: usize) -> f64 {
        let tier = |(lo, hi): (usize, usize), mass: f64| {
            if (lo..=hi).contains(&len) {
                mass / (hi - lo + 1) as f64
            } else {
                0.0
            }
        };
        tier(self.head, self.head_mass) + tier(self.tail, 1.0 - self.head_mass)
    }

    pub fn max_len(&self) -> usize {
        self.head.1.max(self.tail.1)
    }
}

pub fn skewed_length_sample<R: Rng>(rng: &mut R, spec: &LengthSpec) -> usize {
    let (lo, hi) = if rng.gen_bool(spec.head_mass) { spec.head } else { spec.tail };
    rng.gen_range(lo..=hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sort,
    Successor,
    Count,
    Fill,
    Increment,
    Carry,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Sort, Task::Successor, Task::Count, Task::Fill, Task::Increment, Task::Carry];

    pub fn name(self) -> &'static str {
        match self {
            Task::Sort => "sort",
            Task::Successor => "successor",
            Task::Count => "count",
            Task::Fill => "fill",
            Task::Increment => "increment",
            Task::Carry => "carry",
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            Task::Increment | Task::Carry => TaskFamily::Increment,
            _ => TaskFamily::Sorting,
        }
    }

    pub fn is_hint(self) -> bool {
        !matches!(self, Task::Sort | Task::Increment)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    pub lengths: LengthSpec,
    /// Chance of the repeated-palette branch in sorting inputs.
    pub repetition_prob: f64,
    /// Chance of the trailing-nines branch in increment inputs.
    pub nines_prob: f64,
    /// Inclusive range of sorting numbers.
    pub values: (u32, u32),
}

impl GenConfig {
    pub fn sorting(seed: u64, count: usize) -> Self {
        Self { seed, count, lengths: LengthSpec::SORTING, repetition_prob: 0.1, nines_prob: 0.1, values: (1, 100) }
    }

    pub fn increment(seed: u64, count: usize) -> Self {
        Self { lengths: LengthSpec::INCREMENT, ..Self::sorting(seed, count) }
    }

    pub fn for_task(task: Task, seed: u64, count: usize) -> Self {
        match task.family() {
            TaskFamily::Sorting => Self::sorting(seed, count),
            TaskFamily::Increment => Self::increment(seed, count),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lengths.validate()?;
        for p in [self.repetition_prob, self.nines_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Contract(format!("probability {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.values;
        if lo == 0 || lo >= hi {
            return Err(Error::Contract(format!("value range {lo}..={hi} needs at least two positive numbers")));
        }
        Ok(())
    }

    /// Generator for example `index`; independent of every other index.
    pub fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// Which generation branch produced an example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Repeated,
    Nines,
    Tie,
}

/// An example before tokenization: `input, ⊥, given, answer`, where only
/// the answer is predicted and `scored[k]` says whether `answer[k]` enters
/// the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub task: Task,
    pub input: Vec<Symbol>,
    pub given: Vec<Symbol>,
    pub answer: Vec<Symbol>,
    pub scored: Vec<bool>,
    pub variant: Variant,
}

impl RawExample {
    fn new(task: Task, input: Vec<Symbol>, given: Vec<Symbol>, answer: Vec<Symbol>, variant: Variant) -> Self {
        let scored = vec![true; answer.len()];
        Self { task, input, given, answer, scored, variant }
    }

    /// Sorting instance over `seq`.
    pub fn sorting(seq: &[u32]) -> Self {
        Self::new(Task::Sort, vals(seq), Vec::new(), vals(&sorted(seq)), Variant::Plain)
    }

    /// Successor query for `a`, answered with ⊥ at the maximum.
    pub fn successor(seq: &[u32], a: u32) -> Self {
        let next = successor_of(seq, a).map_or(Symbol::Delim, Symbol::Value);
        Self::new(Task::Successor, vals(seq), vec![Symbol::Value(a)], vec![next], Variant::Plain)
    }

    /// Increment of the number with `digits`, most significant first.
    pub fn increment(digits: &[u32]) -> Self {
        let answer: Vec<u32> = increment_digits(digits).into_iter().map(|(d, _)| d).collect();
        Self::new(Task::Increment, vals(digits), Vec::new(), vals(&answer), Variant::Plain)
    }

    /// Increment with each output digit followed by `↑` and its carry bit.
    pub fn carry(digits: &[u32]) -> Self {
        let mut ex = Self::new(Task::Carry, vals(digits), Vec::new(), Vec::new(), Variant::Plain);
        for (d, c) in increment_digits(digits) {
            ex.answer.extend([Symbol::Value(d), Symbol::Up, Symbol::Value(c)]);
            ex.scored.extend([true, false, true]);
        }
        ex
    }

    /// `a` repeated `m` times, with `j` copies already written after ⊥.
    pub fn fill(a: u32, m: usize, j: usize) -> Self {
        Self::new(Task::Fill, vals(&vec![a; m]), vals(&vec![a; j]), vals(&vec![a; m - j]), Variant::Plain)
    }

    fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn sequence(&self) -> Vec<Symbol> {
        let mut s = self.input.clone();
        s.push(Symbol::Delim);
        s.extend_from_slice(&self.given);
        s.extend_from_slice(&self.answer);
        s
    }

    pub fn input_values(&self) -> Vec<u32> {
        values_of(&self.input)
    }

    pub fn answer_values(&self) -> Vec<u32> {
        values_of(&self.answer)
    }
}

fn values_of(syms: &[Symbol]) -> Vec<u32> {
    syms.iter()
        .filter_map(|s| match s {
            Symbol::Value(v) => Some(*v),
            _ => None,
        })
        .collect()
}

fn vals(v: &[u32]) -> Vec<Symbol> {
    v.iter().map(|&x| Symbol::Value(x)).collect()
}

fn sort_input<R: Rng>(rng: &mut R, cfg: &GenConfig, len: usize, repetition_prob: f64) -> (Vec<u32>, Variant) {
    let (lo, hi) = cfg.values;
    if repetition_prob > 0.0 && rng.gen_bool(repetition_prob) {
        let span = (hi - lo + 1) as usize;
        let k = (len / 2).clamp(1, span);
        let palette: Vec<u32> = index::sample(rng, span, k).into_iter().map(|i| lo + i as u32).collect();
        let seq = (0..len).map(|_| *palette.choose(rng).expect("non-empty palette")).collect();
        (seq, Variant::Repeated)
    } else {
        ((0..len).map(|_| rng.gen_range(lo..=hi)).collect(), Variant::Plain)
    }
}

/// Non-decreasing order of `seq`.
pub fn sorted(seq: &[u32]) -> Vec<u32> {
    let mut v = seq.to_vec();
    v.sort_unstable();
    v
}

/// The element right after the first occurrence of `a` in sorted order,
/// or `None` when that occurrence is the last element.
pub fn successor_of(seq: &[u32], a: u32) -> Option<u32> {
    let s = sorted(seq);
    let first = s.iter().position(|&x| x == a)?;
    s.get(first + 1).copied()
}

pub fn gen_sort_example<R: Rng>(rng: &mut R, cfg: &GenConfig, repetition_mode: bool) -> RawExample {
    let len = skewed_length_sample(rng, &cfg.lengths);
    let p = if repetition_mode { cfg.repetition_prob } else { 0.0 };
    let (seq, variant) = sort_input(rng, cfg, len, p);
    RawExample::sorting(&seq).with_variant(variant)
}

pub fn gen_successor_example<R: Rng>(rng: &mut R, cfg: &GenConfig) -> RawExample {
    let len = skewed_length_sample(rng, &cfg.lengths);
    let (seq, variant) = sort_input(rng, cfg, len, cfg.repetition_prob);
    let a = seq[rng.gen_range(0..seq.len())];
    RawExample::successor(&seq, a).with_variant(variant)
}

/// Valid gaps `major − minor` for two counts summing to `len`, minor ≥ 1.
fn count_gaps(len: usize) -> Vec<usize> {
    (1..=5).filter(|&g| g < len && (len - g) % 2 == 0).collect()
}

pub fn gen_count_example<R: Rng>(rng: &mut R, cfg: &GenConfig) -> RawExample {
    let len = skewed_length_sample(rng, &cfg.lengths);
    let (lo, hi) = cfg.values;
    let pair = index::sample(rng, (hi - lo + 1) as usize, 2);
    let (a, b) = (lo + pair.index(0) as u32, lo + pair.index(1) as u32);
    let mut seq;
    let (target, variant) = if rng.gen_bool(0.5) {
        let each = (len / 2).max(1);
        seq = [vec![a; each], vec![b; each]].concat();
        (Symbol::Delim, Variant::Tie)
    } else {
        let (under, over) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        let len = len.max(3);
        let gaps = count_gaps(len);
        let gap = gaps[rng.gen_range(0..gaps.len())];
        let minor = (len - gap) / 2;
        seq = [vec![under; minor], vec![over; minor + gap]].concat();
        (Symbol::Value(under), Variant::Plain)
    };
    seq.shuffle(rng);
    RawExample::new(Task::Count, vals(&seq), Vec::new(), vec![target], variant)
}

pub fn gen_fill_example<R: Rng>(rng: &mut R, cfg: &GenConfig) -> RawExample {
    let len = skewed_length_sample(rng, &cfg.lengths);
    let a = rng.gen_range(cfg.values.0..=cfg.values.1);
    let m = rng.gen_range(1..=(len / 2).max(1));
    let j = rng.gen_range(0..m);
    RawExample::fill(a, m, j)
}

fn increment_input<R: Rng>(rng: &mut R, cfg: &GenConfig) -> (Vec<u32>, Variant) {
    let len = skewed_length_sample(rng, &cfg.lengths);
    let mut digits: Vec<u32> = (0..len).map(|i| if i == 0 { rng.gen_range(1..=9) } else { rng.gen_range(0..=9) }).collect();
    if rng.gen_bool(cfg.nines_prob) {
        let k = rng.gen_range(1..=len);
        for d in &mut digits[len - k..] {
            *d = 9;
        }
        return (digits, Variant::Nines);
    }
    (digits, Variant::Plain)
}

/// Digits of `value + 1`, least significant first, with the carry out of
/// each position. `digits` is most significant first.
pub fn increment_digits(digits: &[u32]) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(digits.len() + 1);
    let mut carry = 1;
    for &d in digits.iter().rev() {
        let s = d + carry;
        carry = s / 10;
        out.push((s % 10, carry));
    }
    if carry == 1 {
        out.push((1, 0));
    }
    out
}

pub fn gen_increment_example<R: Rng>(rng: &mut R, cfg: &GenConfig) -> RawExample {
    let (digits, variant) = increment_input(rng, cfg);
    RawExample::increment(&digits).with_variant(variant)
}

pub fn gen_carry_example<R: Rng>(rng: &mut R, cfg: &GenConfig) -> RawExample {
    let (digits, variant) = increment_input(rng, cfg);
    RawExample::carry(&digits).with_variant(variant)
}

/// Example `index` of the dataset described by `(task, cfg)`.
pub fn gen_example(task: Task, cfg: &GenConfig, index: usize) -> RawExample {
    let mut rng = cfg.rng(index);
    match task {
        Task::Sort => gen_sort_example(&mut rng, cfg, true),
        Task::Successor => gen_successor_example(&mut rng, cfg),
        Task::Count => gen_count_example(&mut rng, cfg),
        Task::Fill => gen_fill_example(&mut rng, cfg),
        Task::Increment => gen_increment_example(&mut rng, cfg),
        Task::Carry => gen_carry_example(&mut rng, cfg),
    }
}

pub fn gen_dataset(task: Task, cfg: &GenConfig) -> Result<Vec<RawExample>> {
    cfg.validate()?;
    Ok((0..cfg.count).into_par_iter().map(|i| gen_example(task, cfg, i)).collect())
}

pub fn gen_sort_dataset(cfg: &GenConfig, repetition_mode: bool) -> Result<Vec<RawExample>> {
    cfg.validate()?;
    Ok((0..cfg.count)
        .into_par_iter()
        .map(|i| gen_sort_example(&mut cfg.rng(i), cfg, repetition_mode))
        .collect())
}

/// `rep(i, r)`: `⌊i/r⌋` distinct numbers repeated `r` times plus uniform
/// fillers, shuffled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepTestConfig {
    pub i: usize,
    pub r: usize,
    pub count: usize,
}

impl RepTestConfig {
    pub fn validate(&self, values: (u32, u32)) -> Result<()> {
        if self.r < 2 || self.i < self.r {
            return Err(Error::Contract(format!("rep({}, {}) needs r ≥ 2 and i ≥ r", self.i, self.r)));
        }
        if self.i / self.r > (values.1 - values.0 + 1) as usize {
            return Err(Error::Contract(format!("rep({}, {}) needs more distinct numbers than available", self.i, self.r)));
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        format!("rep({},{})", self.i, self.r)
    }
}

pub fn gen_rep_example<R: Rng>(rng: &mut R, rep: &RepTestConfig, values: (u32, u32)) -> Vec<u32> {
    let (lo, hi) = values;
    let k = rep.i / rep.r;
    let mut seq: Vec<u32> = index::sample(rng, (hi - lo + 1) as usize, k)
        .into_iter()
        .flat_map(|x| std::iter::repeat(lo + x as u32).take(rep.r))
        .collect();
    seq.extend((0..rep.i - k * rep.r).map(|_| rng.gen_range(lo..=hi)));
    seq.shuffle(rng);
    seq
}

pub fn gen_rep_test_set(rep: &RepTestConfig, values: (u32, u32), seed: u64) -> Result<Vec<RawExample>> {
    rep.validate(values)?;
    let cfg = GenConfig { seed, count: rep.count, values, ..GenConfig::sorting(seed, rep.count) };
    Ok((0..rep.count)
        .into_par_iter()
        .map(|idx| {
            let seq = gen_rep_example(&mut cfg.rng(idx), rep, values);
            RawExample::sorting(&seq).with_variant(Variant::Repeated)
        })
        .collect())
}

/// Test suites at a single length: uniform sorting inputs or uniform
/// `len`-digit numbers.
pub fn gen_fixed_length_set(task: Task, len: usize, count: usize, values: (u32, u32), seed: u64) -> Result<Vec<RawExample>> {
    let cfg = GenConfig {
        lengths: LengthSpec { head: (len, len), tail: (len, len), head_mass: 1.0 },
        values,
        repetition_prob: 0.0,
        nines_prob: 0.0,
        ..GenConfig::for_task(task, seed, count)
    };
    match task {
        Task::Sort => gen_sort_dataset(&cfg, false),
        Task::Increment => gen_dataset(task, &cfg),
        other => Err(Error::Contract(format!("no fixed-length test suite for `{other}`"))),
    }
}
