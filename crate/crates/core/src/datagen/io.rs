use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encode::EncodedExample;
use super::gen::{GenConfig, RepTestConfig, Task};
use super::tokens::TokenTable;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "lg-dataset/1";

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub task: Task,
    pub table: String,
    pub seed: u64,
    pub context_length: usize,
    pub count: usize,
    pub generator: GenConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep: Option<RepTestConfig>,
}

impl DatasetHeader {
    pub fn new(task: Task, generator: &GenConfig, context_length: usize, count: usize) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            task,
            table: TokenTable::for_family(task.family()).version().to_string(),
            seed: generator.seed,
            context_length,
            count,
            generator: generator.clone(),
            rep: None,
        }
    }

    pub fn token_table(&self) -> TokenTable {
        TokenTable::for_family(self.task.family())
    }

    fn check(&self) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Version(format!("dataset format `{}`, expected `{DATASET_FORMAT}`", self.format)));
        }
        let table = self.token_table();
        if self.table != table.version() {
            return Err(Error::Version(format!("token table `{}`, expected `{}`", self.table, table.version())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<EncodedExample>,
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, examples: &[EncodedExample]) -> Result<()> {
    if header.count != examples.len() {
        return Err(Error::Contract(format!("header declares {} examples, got {}", header.count, examples.len())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| Error::Malformed(format!("{} is empty", path.display())))??;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| Error::Malformed(format!("dataset header: {e}")))?;
    header.check()?;
    let table = header.token_table();
    let mut examples = Vec::with_capacity(header.count);
    for (k, line) in lines.enumerate() {
        let line = line?;
        let ex: EncodedExample =
            serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("record {k}: {e}")))?;
        if ex.tokens.len() != header.context_length
            || ex.targets.len() != header.context_length
            || ex.mask.len() != header.context_length
        {
            return Err(Error::Malformed(format!("record {k} is not padded to {}", header.context_length)));
        }
        if let Some(&bad) = ex.tokens.iter().chain(&ex.targets).find(|&&t| t as usize >= table.vocab_size()) {
            return Err(Error::Malformed(format!("record {k} holds id {bad} outside the {} table", table.version())));
        }
        examples.push(ex);
    }
    if examples.len() != header.count {
        return Err(Error::Malformed(format!("header declares {} examples, file holds {}", header.count, examples.len())));
    }
    Ok(Dataset { header, examples })
}
