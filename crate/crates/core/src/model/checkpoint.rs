//! Checkpoint codec: versioned header (config, vocab hash, training state,
//! tensor manifest as JSON) followed by raw little-endian f32 tensors in
//! manifest order — weights, then the two Adam moment sets.

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamSet, TrainParams, Trainer};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"OFCKPT01";

#[derive(Debug)]
pub enum CheckpointError {
    BadMagic,
    Header(String),
    Corrupt(&'static str),
    Config(super::ConfigError),
}

impl core::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            Self::Header(e) => write!(f, "bad checkpoint header: {e}"),
            Self::Corrupt(what) => write!(f, "corrupt checkpoint: {what}"),
            Self::Config(e) => write!(f, "checkpoint config invalid: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: u64,
    train: TrainParams,
    step: u64,
    data_rng: [u64; 4],
    dropout_rng: [u64; 4],
    tensors: Vec<TensorEntry>,
}

/// A deserialized checkpoint: enough to run inference (`model`) or to resume
/// training exactly (`into_trainer`).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: u64,
    pub train: TrainParams,
    pub step: u64,
    pub data_rng: [u64; 4],
    pub dropout_rng: [u64; 4],
    pub weights: ParamSet<f32>,
    pub adam_m: ParamSet<f32>,
    pub adam_v: ParamSet<f32>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f32>, vocab_hash: u64) -> Self {
        let (m, v) = trainer.optimizer_state();
        let (data_rng, dropout_rng) = trainer.rng_states();
        Self {
            config: trainer.model.config.clone(),
            vocab_hash,
            train: trainer.params.clone(),
            step: trainer.step,
            data_rng,
            dropout_rng,
            weights: trainer.model.params.clone(),
            adam_m: m.clone(),
            adam_v: v.clone(),
        }
    }

    pub fn model(&self) -> Model<f32> {
        Model {
            config: self.config.clone(),
            params: self.weights.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer<f32> {
        Trainer::restore(
            Model {
                config: self.config.clone(),
                params: self.weights,
            },
            self.train,
            self.step,
            self.adam_m,
            self.adam_v,
            self.data_rng,
            self.dropout_rng,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        for (prefix, set) in [
            ("w", &self.weights),
            ("adam_m", &self.adam_m),
            ("adam_v", &self.adam_v),
        ] {
            for (name, t) in set.tensors() {
                tensors.push(TensorEntry {
                    name: format!("{prefix}.{name}"),
                    len: t.len() as u64,
                });
            }
        }
        let header = Header {
            config: self.config.clone(),
            vocab_hash: self.vocab_hash,
            train: self.train.clone(),
            step: self.step,
            data_rng: self.data_rng,
            dropout_rng: self.dropout_rng,
            tensors,
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for set in [&self.weights, &self.adam_m, &self.adam_v] {
            for (_, t) in set.tensors() {
                for &x in t {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_at = 12 + header_len;
        if bytes.len() < body_at {
            return Err(CheckpointError::Corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body_at])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        header.config.validate().map_err(CheckpointError::Config)?;

        let mut sets = Vec::with_capacity(3);
        let mut pos = body_at;
        for _ in 0..3 {
            let mut set = ParamSet::<f32>::zeros(&header.config);
            for (_, t) in set.tensors_mut() {
                let need = t.len() * 4;
                if pos + need > bytes.len() {
                    return Err(CheckpointError::Corrupt("truncated tensor data"));
                }
                for (i, chunk) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
                    t[i] = f32::from_le_bytes(chunk.try_into().unwrap());
                }
                pos += need;
            }
            sets.push(set);
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes"));
        }
        let adam_v = sets.pop().unwrap();
        let adam_m = sets.pop().unwrap();
        let weights = sets.pop().unwrap();
        Ok(Self {
            config: header.config,
            vocab_hash: header.vocab_hash,
            train: header.train,
            step: header.step,
            data_rng: header.data_rng,
            dropout_rng: header.dropout_rng,
            weights,
            adam_m,
            adam_v,
        })
    }
}
