use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::atlas::DELIM;
use super::build::{build_construction, ConstructionConfig, ConstructionModel, LayerNormMode};
use super::engine::Runner;
use crate::datagen::tokens::{TokenTable, DELIM_ID, SORT_MAX_VALUE};
use crate::error::{Error, Result};
use crate::model::SequenceModel;

/// The construction behind the sorting token table. A model is built for
/// each input length it sees.
#[derive(Clone, Debug)]
pub struct ConstructionDecoder {
    pub q: usize,
    pub layernorm: LayerNormMode,
    pub max_n: usize,
}

impl ConstructionDecoder {
    pub fn new(q: usize) -> Result<Self> {
        if !(2..=SORT_MAX_VALUE as usize).contains(&q) {
            return Err(Error::Vocab(format!("alphabet {q} does not fit the sorting table")));
        }
        Ok(Self { q, layernorm: LayerNormMode::Off, max_n: 1000 })
    }

    pub fn with_layernorm(mut self, mode: LayerNormMode) -> Self {
        self.layernorm = mode;
        self
    }

    pub fn model_for(&self, n: usize) -> Result<ConstructionModel> {
        build_construction(ConstructionConfig::new(self.q, n).with_layernorm(self.layernorm))
    }

    fn symbol(&self, id: u32) -> Result<u32> {
        if id == DELIM_ID {
            return Ok(DELIM);
        }
        match TokenTable::SORTING.value_of(id) {
            Some(v) if v as usize <= self.q => Ok(v),
            _ => Err(Error::UnknownToken(id)),
        }
    }

    fn runner_over<'m>(&self, model: &'m ConstructionModel, prefix: &[u32]) -> Result<Runner<'m>> {
        let mut runner = Runner::new(model, false);
        for &id in prefix {
            runner.push(self.symbol(id)?)?;
        }
        Ok(runner)
    }

    fn logits_of(&self, runner: &Runner<'_>) -> Vec<f64> {
        let mut logits = vec![f64::NEG_INFINITY; TokenTable::SORTING.vocab_size()];
        for (a, s) in runner.scores().into_iter().enumerate() {
            logits[TokenTable::SORTING.value_id(a as u32 + 1) as usize] = s;
        }
        logits
    }

    fn check_prefix(&self, prefix: &[u32], n_input: usize) -> Result<()> {
        if n_input < 2 || prefix.len() <= n_input || prefix[n_input] != DELIM_ID {
            return Err(Error::Contract(format!("expected ⊥ after {n_input} input tokens")));
        }
        Ok(())
    }
}

impl SequenceModel for ConstructionDecoder {
    fn vocab_size(&self) -> usize {
        TokenTable::SORTING.vocab_size()
    }

    fn context_length(&self) -> usize {
        2 * self.max_n + 2
    }

    fn next_logits(&self, prefix: &[u32], n_input: usize) -> Result<Vec<f64>> {
        self.check_prefix(prefix, n_input)?;
        let model = self.model_for(n_input)?;
        let runner = self.runner_over(&model, prefix)?;
        Ok(self.logits_of(&runner))
    }

    fn greedy_continue(&self, input: &[u32], n_input: usize, n_out: usize) -> Result<Vec<u32>> {
        self.check_prefix(input, n_input)?;
        let model = self.model_for(n_input)?;
        let mut runner = self.runner_over(&model, input)?;
        let mut out = Vec::with_capacity(n_out);
        for k in 0..n_out {
            let sym = runner.predict();
            out.push(TokenTable::SORTING.value_id(sym));
            if k + 1 < n_out {
                runner.push(sym)?;
            }
        }
        Ok(out)
    }
}

/// Every sequence of length `n` over `1..=q`, in lexicographic order.
pub fn exhaustive_sequences(q: usize, n: usize) -> Vec<Vec<u32>> {
    let total = q.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let mut seq = vec![0; n];
            for slot in seq.iter_mut().rev() {
                *slot = (idx % q) as u32 + 1;
                idx /= q;
            }
            seq
        })
        .collect()
}

/// `count` uniform sequences of length `n` over `1..=q`; sequence `k` uses
/// its own stream of the seeded generator.
pub fn random_sequences(q: usize, n: usize, count: usize, seed: u64) -> Vec<Vec<u32>> {
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            (0..n).map(|_| rng.gen_range(1..=q as u32)).collect()
        })
        .collect()
}
