use serde::{Deserialize, Serialize};

use super::gen::{RawExample, Task};
use super::tokens::{TokenTable, PAD_ID};
use crate::error::{Error, Result};
use crate::model::LossItem;

/// A tokenized example padded to the context length. Position `t` predicts
/// `targets[t]`, the id at `t + 1` of the full sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    #[serde(with = "bit_vec")]
    pub mask: Vec<bool>,
    pub n_input: usize,
    pub task: Task,
}

mod bit_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(mask.iter().map(|&b| b as u8))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("mask entry {other}"))),
            })
            .collect()
    }
}

pub fn encode_example(raw: &RawExample, table: &TokenTable, context_length: usize) -> Result<EncodedExample> {
    if raw.input.is_empty() {
        return Err(Error::Contract("example without input".into()));
    }
    if raw.task.family() != table.family {
        return Err(Error::Vocab(format!("task `{}` does not use the {} table", raw.task, table.version())));
    }
    let seq = table.encode_all(&raw.sequence())?;
    let len = seq.len() - 1;
    if len > context_length {
        return Err(Error::Capacity(format!("example needs {len} positions, context holds {context_length}")));
    }
    let answer_start = raw.input.len() + 1 + raw.given.len();
    let mut tokens = vec![PAD_ID; context_length];
    let mut targets = vec![PAD_ID; context_length];
    let mut mask = vec![false; context_length];
    tokens[..len].copy_from_slice(&seq[..len]);
    targets[..len].copy_from_slice(&seq[1..]);
    for (k, &scored) in raw.scored.iter().enumerate() {
        mask[answer_start + k - 1] = scored;
    }
    Ok(EncodedExample { tokens, targets, mask, n_input: raw.input.len(), task: raw.task })
}

pub fn encode_all(raws: &[RawExample], table: &TokenTable, context_length: usize) -> Result<Vec<EncodedExample>> {
    raws.iter().map(|r| encode_example(r, table, context_length)).collect()
}

impl EncodedExample {
    /// Positions up to and including the last scored prediction.
    pub fn active_len(&self) -> usize {
        self.mask.iter().rposition(|&m| m).map_or(0, |p| p + 1)
    }

    /// Tokens up to and including the position of the first prediction.
    pub fn prompt(&self) -> &[u32] {
        let first = self.mask.iter().position(|&m| m).unwrap_or(self.n_input);
        &self.tokens[..=first]
    }

    /// Every id from the first prediction to the end, scored or not.
    pub fn expected(&self) -> &[u32] {
        &self.targets[self.prompt().len() - 1..self.active_len()]
    }

    pub fn loss_item(&self) -> LossItem<'_> {
        let len = self.active_len();
        LossItem { tokens: &self.tokens[..len], targets: &self.targets[..len], mask: &self.mask[..len], n_input: self.n_input }
    }

    /// Rebuilds the symbol form; `decode(encode(x)) = x`.
    pub fn decode(&self, table: &TokenTable) -> Result<RawExample> {
        let len = self.active_len();
        let mut seq = table.decode_all(&self.tokens[..len])?;
        seq.push(table.decode(self.targets[len - 1])?);
        let first = self.prompt().len();
        let answer = seq.split_off(first);
        let given = seq.split_off(self.n_input + 1);
        seq.pop();
        let scored = self.mask[first - 1..len].to_vec();
        let variant = super::gen::Variant::Plain;
        Ok(RawExample { task: self.task, input: seq, given, answer, scored, variant })
    }
}
