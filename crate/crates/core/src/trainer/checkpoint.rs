use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of the batch sampler's ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string; it does not fit a JSON number.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&hex::decode(&self.seed).expect("validated seed"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().expect("validated word position"));
        rng
    }

    fn validate(&self) -> Result<()> {
        let ok = hex::decode(&self.seed).map(|s| s.len() == 32).unwrap_or(false);
        if !ok || self.word_pos.parse::<u128>().is_err() {
            return Err(Error::Malformed("sampler state".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<R: Real = f64> {
    pub model: Model<R>,
    pub optimizer: AdamState<R>,
    pub config: TrainConfig,
    pub step: usize,
    pub rng: RngState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    precision: String,
    model: ModelConfig,
    train: TrainConfig,
    step: usize,
    rng: RngState,
    adam_steps: Vec<u64>,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
}

impl<R: Real> Checkpoint<R> {
    fn blobs(&self) -> Vec<(TensorEntry, &Tensor<R>)> {
        let params = self.model.params();
        let mut out = Vec::with_capacity(3 * params.len());
        for (role, tensors) in [
            ("param", params.iter().map(|(_, t)| *t).collect::<Vec<_>>()),
            ("adam_m", self.optimizer.m.iter().collect()),
            ("adam_v", self.optimizer.v.iter().collect()),
        ] {
            for ((name, _), t) in params.iter().zip(tensors) {
                out.push((TensorEntry { name: name.clone(), role: role.to_string(), shape: t.shape().to_vec() }, t));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blobs = self.blobs();
        let numel: usize = blobs.iter().map(|(_, t)| t.numel()).sum();
        let header = Header {
            precision: R::NAME.to_string(),
            model: self.model.config.clone(),
            train: self.config.clone(),
            step: self.step,
            rng: self.rng.clone(),
            adam_steps: self.optimizer.steps.clone(),
            tensors: blobs.iter().map(|(e, _)| e.clone()).collect(),
            payload_bytes: (numel * R::BYTES) as u64,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + numel * R::BYTES);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in blobs {
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Version("not an LGCK checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(Error::Malformed("truncated checkpoint header".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Malformed(format!("checkpoint header: {e}")))?;
        if header.precision != R::NAME {
            return Err(Error::Version(format!("{} checkpoint read as {}", header.precision, R::NAME)));
        }
        header.rng.validate()?;
        let payload = &body[hlen..];
        if payload.len() as u64 != header.payload_bytes {
            return Err(Error::Malformed(format!(
                "payload holds {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let mut model = Model::<R>::init(header.model.clone(), 0)?;
        let mut optimizer = AdamState::for_model(&model);
        if header.adam_steps.len() != optimizer.steps.len() {
            return Err(Error::Malformed("optimizer step counters".into()));
        }
        optimizer.steps = header.adam_steps.clone();
        let expected: Vec<TensorEntry> = Checkpoint {
            model: model.clone(),
            optimizer: optimizer.clone(),
            config: header.train.clone(),
            step: 0,
            rng: header.rng.clone(),
        }
        .blobs()
        .into_iter()
        .map(|(e, _)| e)
        .collect();
        if expected != header.tensors {
            return Err(Error::Malformed("tensor manifest does not match the model configuration".into()));
        }
        let mut offset = 0;
        let mut read = |t: &mut Tensor<R>| -> Result<()> {
            let n = t.numel() * R::BYTES;
            let chunk = payload.get(offset..offset + n).ok_or_else(|| Error::Malformed("truncated payload".into()))?;
            for (x, b) in t.data_mut().iter_mut().zip(chunk.chunks_exact(R::BYTES)) {
                *x = R::read_le(b);
            }
            offset += n;
            Ok(())
        };
        for (_, t) in model.params_mut() {
            read(t)?;
        }
        for t in optimizer.m.iter_mut().chain(optimizer.v.iter_mut()) {
            read(t)?;
        }
        Ok(Self { model, optimizer, config: header.train, step: header.step, rng: header.rng })
    }
}

pub fn save_checkpoint<R: Real>(path: &Path, ckpt: &Checkpoint<R>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Real>(path: &Path) -> Result<Checkpoint<R>> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

/// Element type recorded in a checkpoint file ("f32" or "f64").
pub fn checkpoint_precision(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Version("not an LGCK checkpoint".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + hlen).ok_or_else(|| Error::Malformed("truncated checkpoint header".into()))?;
    let header: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| Error::Malformed(format!("checkpoint header: {e}")))?;
    header["precision"].as_str().map(str::to_string).ok_or_else(|| Error::Malformed("checkpoint precision".into()))
}
