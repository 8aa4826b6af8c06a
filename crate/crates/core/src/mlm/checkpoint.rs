//! `WUGCKPT1` | u64 LE header length | JSON header | f32 LE payloads in header order.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::TensorSpec;
use super::{config_hash, MaskingPolicy, MlmError, ModelConfig, OptimizerConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WUGCKPT1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, MlmError> {
        use rand::SeedableRng;
        let bad = || MlmError::Checkpoint("malformed rng state".into());
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad())?.try_into().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub masking: MaskingPolicy,
    pub config_hash: String,
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: u64,
    /// Updates consumed from the stream (including skipped ones).
    pub update: u64,
    pub total_updates: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorSpec>,
    pub payloads: Vec<PayloadSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), MlmError> {
        let mut header = self.header.clone();
        header.payloads = vec![
            PayloadSpec { name: "params".into(), len: self.params.len() },
            PayloadSpec { name: "adam.m".into(), len: self.adam_m.len() },
            PayloadSpec { name: "adam.v".into(), len: self.adam_v.len() },
        ];
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(4 * (self.params.len() + self.adam_m.len() + self.adam_v.len()));
        for x in self.params.iter().chain(&self.adam_m).chain(&self.adam_v) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, MlmError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(MlmError::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        if header.config_hash != config_hash(&header.model, &header.optim, &header.masking) {
            return Err(MlmError::Checkpoint("config hash mismatch".into()));
        }
        let mut read_vec = |name: &str| -> Result<Vec<f32>, MlmError> {
            let spec = header
                .payloads
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| MlmError::Checkpoint(format!("missing payload {name}")))?;
            let mut bytes = vec![0u8; spec.len * 4];
            r.read_exact(&mut bytes)?;
            Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        };
        let params = read_vec("params")?;
        let adam_m = read_vec("adam.m")?;
        let adam_v = read_vec("adam.v")?;
        let expected: usize = header.tensors.iter().map(|t| t.len()).sum();
        if params.len() != expected || adam_m.len() != expected || adam_v.len() != expected {
            return Err(MlmError::Checkpoint("payload length does not match tensor directory".into()));
        }
        Ok(Checkpoint { header, params, adam_m, adam_v })
    }

    pub fn save(&self, path: &Path) -> Result<(), MlmError> {
        let tmp = path.with_extension("tmp");
        {
            let f = std::fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(f);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MlmError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
