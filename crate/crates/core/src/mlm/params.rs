//! Flat parameter vector with a named tensor directory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: TensorKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one encoder layer's tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub wqkv: usize,
    pub bqkv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) emb_ln_g: usize,
    pub(crate) emb_ln_b: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
    pub(crate) head_ln_g: usize,
    pub(crate) head_ln_b: usize,
    pub(crate) out_bias: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (h, f, v) = (cfg.hidden, cfg.intermediate, cfg.vocab_size);
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>, kind: TensorKind| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorSpec { name, shape, offset, kind });
            offset
        };
        use TensorKind::*;
        let tok_emb = add("embeddings.token".into(), vec![v, h], Weight);
        let pos_emb = add("embeddings.position".into(), vec![cfg.max_seq_len, h], Weight);
        let emb_ln_g = add("embeddings.ln.gain".into(), vec![h], Gain);
        let emb_ln_b = add("embeddings.ln.bias".into(), vec![h], Bias);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerOffsets {
                wqkv: add(p("attn.qkv.weight"), vec![h, 3 * h], Weight),
                bqkv: add(p("attn.qkv.bias"), vec![3 * h], Bias),
                wo: add(p("attn.out.weight"), vec![h, h], Weight),
                bo: add(p("attn.out.bias"), vec![h], Bias),
                ln1_g: add(p("attn.ln.gain"), vec![h], Gain),
                ln1_b: add(p("attn.ln.bias"), vec![h], Bias),
                w1: add(p("ffn.in.weight"), vec![h, f], Weight),
                b1: add(p("ffn.in.bias"), vec![f], Bias),
                w2: add(p("ffn.out.weight"), vec![f, h], Weight),
                b2: add(p("ffn.out.bias"), vec![h], Bias),
                ln2_g: add(p("ffn.ln.gain"), vec![h], Gain),
                ln2_b: add(p("ffn.ln.bias"), vec![h], Bias),
            });
        }
        let head_w = add("head.dense.weight".into(), vec![h, h], Weight);
        let head_b = add("head.dense.bias".into(), vec![h], Bias);
        let head_ln_g = add("head.ln.gain".into(), vec![h], Gain);
        let head_ln_b = add("head.ln.bias".into(), vec![h], Bias);
        let out_bias = add("head.out.bias".into(), vec![v], Bias);
        Layout {
            tensors,
            total,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            head_w,
            head_b,
            head_ln_g,
            head_ln_b,
            out_bias,
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Normal(0, init_std) weights, zero biases, unit gains.
    pub fn init<T: Scalar>(&self, init_std: f64, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_std).expect("positive std");
        let mut out = vec![T::zero(); self.total];
        for t in &self.tensors {
            let slot = &mut out[t.range()];
            match t.kind {
                TensorKind::Weight => slot.iter_mut().for_each(|x| *x = T::c(normal.sample(&mut rng))),
                TensorKind::Bias => {}
                TensorKind::Gain => slot.fill(T::one()),
            }
        }
        out
    }
}
