//! A small post-LN encoder trained with masked language modelling, written
//! against plain slices: forward pass, hand-derived backward pass, AdamW with
//! linear warmup/decay, and a binary checkpoint format.

mod checkpoint;
pub mod gradcheck;
pub mod linalg;
mod mask;
mod model;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use linalg::Scalar;
pub use mask::{mask_sequence, MaskedSeq};
pub use model::{Grads, Model};
pub use optim::{lr_at, AdamState};
pub use params::{Layout, TensorKind, TensorSpec};
pub use train::{encode_line, LineSource, TrainOptions, TrainSummary, Trainer};

#[derive(Debug, Error)]
pub enum MlmError {
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("no labeled positions in batch")]
    NoLabeledPositions,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token id {0} out of vocabulary")]
    TokenOutOfRange(u32),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Feed-forward inner width.
    pub intermediate: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 8,
            heads: 8,
            hidden: 512,
            intermediate: 2048,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
            max_seq_len: 128,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), MlmError> {
        let bad = |m: &str| Err(MlmError::InvalidConfig(m.to_string()));
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be divisible by heads");
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 || self.layers == 0 || self.intermediate == 0 {
            return bad("dimensions must be nonzero");
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub batch: usize,
    pub grad_accum: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 24_000,
            batch: 16,
            grad_accum: 4,
        }
    }
}

impl OptimizerConfig {
    pub fn effective_batch(&self) -> usize {
        self.batch * self.grad_accum
    }

    pub fn validate(&self) -> Result<(), MlmError> {
        if self.batch == 0 || self.grad_accum == 0 {
            return Err(MlmError::InvalidConfig("batch and grad_accum must be nonzero".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(MlmError::InvalidConfig("bad optimizer hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub mask_rate: f64,
    pub replace_mask: f64,
    pub replace_random: f64,
    pub replace_keep: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy { mask_rate: 0.15, replace_mask: 0.8, replace_random: 0.1, replace_keep: 0.1 }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<(), MlmError> {
        let sum = self.replace_mask + self.replace_random + self.replace_keep;
        let parts = [self.mask_rate, self.replace_mask, self.replace_random, self.replace_keep];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(MlmError::InvalidConfig("masking rates must lie in [0,1] and the split must sum to 1".into()));
        }
        Ok(())
    }
}

/// Hash identifying everything that determines a training run besides data and seed.
pub fn config_hash(model: &ModelConfig, optim: &OptimizerConfig, masking: &MaskingPolicy) -> String {
    let doc = serde_json::json!({ "model": model, "optim": optim, "masking": masking });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_config_is_valid() {
        let c = ModelConfig::paper(9600);
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 64);
        assert_eq!(OptimizerConfig::default().effective_batch(), 64);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig { heads: 3, ..ModelConfig::paper(10) };
        assert!(c.validate().is_err());
        let c = ModelConfig { init_std: 0.0, ..ModelConfig::paper(10) };
        assert!(c.validate().is_err());
    }

    #[test]
    fn masking_split_must_sum_to_one() {
        MaskingPolicy::default().validate().unwrap();
        let p = MaskingPolicy { replace_keep: 0.2, ..MaskingPolicy::default() };
        assert!(p.validate().is_err());
    }
}
