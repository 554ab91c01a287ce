use super::{HeadId, Model};
use crate::datagen::tokens::DELIM_ID;
use crate::error::{Error, Result};
use crate::numerics::Real;

/// Anything that scores the next token of a prefix.
pub trait SequenceModel: Sync {
    fn vocab_size(&self) -> usize;
    fn context_length(&self) -> usize;

    /// Main-head logits for the token following `prefix`, whose first
    /// `n_input` tokens are the instance input.
    fn next_logits(&self, prefix: &[u32], n_input: usize) -> Result<Vec<f64>>;

    /// Appends `n_out` greedy tokens to `input`; returns only the new ones.
    fn greedy_continue(&self, input: &[u32], n_input: usize, n_out: usize) -> Result<Vec<u32>> {
        let mut seq = input.to_vec();
        for _ in 0..n_out {
            let logits = self.next_logits(&seq, n_input)?;
            seq.push(argmax_lowest(&logits));
        }
        Ok(seq.split_off(input.len()))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding of exactly `n_out` tokens after an input ending in ⊥.
pub fn greedy_decode<M: SequenceModel + ?Sized>(model: &M, input: &[u32], n_out: usize) -> Result<Vec<u32>> {
    if input.last() != Some(&DELIM_ID) {
        return Err(Error::Contract("decode input must end with ⊥".into()));
    }
    if n_out == 0 {
        return Err(Error::Contract("n_out must be at least 1".into()));
    }
    if input.len() + n_out > model.context_length() {
        return Err(Error::Capacity(format!(
            "{} input + {n_out} output tokens exceed context {}",
            input.len(),
            model.context_length()
        )));
    }
    model.greedy_continue(input, input.len() - 1, n_out)
}

impl<R: Real> SequenceModel for Model<R> {
    fn vocab_size(&self) -> usize {
        self.config.vocab
    }

    fn context_length(&self) -> usize {
        self.config.context_length
    }

    fn next_logits(&self, prefix: &[u32], n_input: usize) -> Result<Vec<f64>> {
        let out = self.forward(prefix, n_input, HeadId::Main, false)?;
        let last = out.logits.rows().checked_sub(1).ok_or_else(|| Error::Contract("empty prefix".into()))?;
        Ok(out.logits.row(last).iter().map(|v| v.f64()).collect())
    }
}
