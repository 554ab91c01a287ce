use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const DELIM_ID: u32 = 1;

/// Largest number in the sorting alphabet.
pub const SORT_MAX_VALUE: u32 = 100;
pub const SORT_VOCAB: usize = 103;
pub const INCREMENT_VOCAB: usize = 14;
const UP_ID: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    Sorting,
    Increment,
}

/// A symbol before tokenization. `Value` is a number for sorting and a
/// decimal digit for increment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Pad,
    Delim,
    Value(u32),
    Up,
    Reserved,
}

/// Fixed symbol↔id bijection for a task family.
///
/// Sorting: PAD→0, ⊥→1, numbers 1..100→2..101, reserved→102.
/// Increment: PAD→0, ⊥→1, digits 0..9→2..11, ↑→12, reserved→13.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTable {
    pub family: TaskFamily,
}

impl TokenTable {
    pub const SORTING: TokenTable = TokenTable { family: TaskFamily::Sorting };
    pub const INCREMENT: TokenTable = TokenTable { family: TaskFamily::Increment };

    pub fn for_family(family: TaskFamily) -> Self {
        Self { family }
    }

    /// Version tag stored in dataset headers.
    pub fn version(&self) -> &'static str {
        match self.family {
            TaskFamily::Sorting => "sort/1",
            TaskFamily::Increment => "increment/1",
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self.family {
            TaskFamily::Sorting => SORT_VOCAB,
            TaskFamily::Increment => INCREMENT_VOCAB,
        }
    }

    pub fn reserved_id(&self) -> u32 {
        self.vocab_size() as u32 - 1
    }

    pub fn value_range(&self) -> (u32, u32) {
        match self.family {
            TaskFamily::Sorting => (1, SORT_MAX_VALUE),
            TaskFamily::Increment => (0, 9),
        }
    }

    pub fn encode(&self, sym: Symbol) -> Result<u32> {
        let (lo, hi) = self.value_range();
        match sym {
            Symbol::Pad => Ok(PAD_ID),
            Symbol::Delim => Ok(DELIM_ID),
            Symbol::Value(v) if (lo..=hi).contains(&v) => Ok(v - lo + 2),
            Symbol::Value(v) => Err(Error::Range(format!("value {v} outside {lo}..={hi}"))),
            Symbol::Up if self.family == TaskFamily::Increment => Ok(UP_ID),
            Symbol::Up => Err(Error::Range("↑ has no id in the sorting table".into())),
            Symbol::Reserved => Ok(self.reserved_id()),
        }
    }

    pub fn decode(&self, id: u32) -> Result<Symbol> {
        let (lo, hi) = self.value_range();
        let value_ids = 2..=(hi - lo + 2);
        match id {
            PAD_ID => Ok(Symbol::Pad),
            DELIM_ID => Ok(Symbol::Delim),
            _ if value_ids.contains(&id) => Ok(Symbol::Value(id - 2 + lo)),
            UP_ID if self.family == TaskFamily::Increment => Ok(Symbol::Up),
            _ if id == self.reserved_id() => Ok(Symbol::Reserved),
            _ => Err(Error::UnknownToken(id)),
        }
    }

    pub fn encode_all(&self, syms: &[Symbol]) -> Result<Vec<u32>> {
        syms.iter().map(|&s| self.encode(s)).collect()
    }

    pub fn decode_all(&self, ids: &[u32]) -> Result<Vec<Symbol>> {
        ids.iter().map(|&i| self.decode(i)).collect()
    }

    /// Id of a value symbol; panics on out-of-range values.
    pub fn value_id(&self, v: u32) -> u32 {
        self.encode(Symbol::Value(v)).expect("value in table range")
    }

    /// Value carried by an id, if it is a value token.
    pub fn value_of(&self, id: u32) -> Option<u32> {
        match self.decode(id) {
            Ok(Symbol::Value(v)) => Some(v),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_bijective() {
        for table in [TokenTable::SORTING, TokenTable::INCREMENT] {
            for id in 0..table.vocab_size() as u32 {
                let sym = table.decode(id).unwrap();
                assert_eq!(table.encode(sym).unwrap(), id);
            }
            assert!(table.decode(table.vocab_size() as u32).is_err());
        }
    }

    #[test]
    fn fixed_ids() {
        let s = TokenTable::SORTING;
        assert_eq!(s.encode(Symbol::Value(1)).unwrap(), 2);
        assert_eq!(s.encode(Symbol::Value(100)).unwrap(), 101);
        assert_eq!(s.reserved_id(), 102);
        let i = TokenTable::INCREMENT;
        assert_eq!(i.encode(Symbol::Value(0)).unwrap(), 2);
        assert_eq!(i.encode(Symbol::Value(9)).unwrap(), 11);
        assert_eq!(i.encode(Symbol::Up).unwrap(), 12);
        assert_eq!(i.reserved_id(), 13);
        assert!(s.encode(Symbol::Up).is_err());
        assert!(i.encode(Symbol::Value(10)).is_err());
    }
}
