//! Central finite-difference check of the analytic gradients.

use serde::{Deserialize, Serialize};

use super::{MlmError, Model, ModelConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with a floor so entries whose true gradient is ~0 (the key
/// bias, for one: softmax ignores a per-row shift) are judged on absolute
/// error against the finite-difference noise level instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every parameter (or every `stride`-th within each tensor) of a
/// dropout-free 64-bit model on the given sequences and labels.
pub fn grad_check(
    config: ModelConfig,
    seed: u64,
    batch: &[(Vec<u32>, Vec<(usize, u32)>)],
    eps: f64,
    stride: usize,
) -> Result<GradCheckReport, MlmError> {
    let config = ModelConfig { dropout: 0.0, ..config };
    let mut model: Model<f64> = Model::new(config, seed)?;
    let labels: usize = batch.iter().map(|b| b.1.len()).sum();
    if labels == 0 {
        return Err(MlmError::NoLabeledPositions);
    }
    let scale = 1.0 / labels as f64;
    let packed: Vec<(&[u32], &[(usize, u32)])> = batch.iter().map(|(i, l)| (&i[..], &l[..])).collect();
    let loss = |m: &Model<f64>| -> Result<f64, MlmError> {
        let mut sink = m.zero_grads();
        Ok(m.loss_and_grad_batch(&packed, scale, None, &mut sink)? * scale)
    };
    let mut grads = model.zero_grads();
    model.loss_and_grad_batch(&packed, scale, None, &mut grads)?;

    let tensors = model.layout.tensors.clone();
    let mut blocks = Vec::with_capacity(tensors.len());
    let mut checked = 0;
    for t in &tensors {
        let mut worst = 0.0f64;
        let mut biggest = 0.0f64;
        for i in t.range().step_by(stride.max(1)) {
            let orig = model.params[i];
            model.params[i] = orig + eps;
            let up = loss(&model)?;
            model.params[i] = orig - eps;
            let down = loss(&model)?;
            model.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(grads[i], numeric));
            biggest = biggest.max(grads[i].abs());
            checked += 1;
        }
        blocks.push(BlockError { name: t.name.clone(), max_rel_err: worst, max_abs_grad: biggest });
    }
    Ok(GradCheckReport { blocks, checked })
}

/// The standard small configuration: 2 layers, hidden 16, vocab 50.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 16,
        intermediate: 64,
        dropout: 0.0,
        layer_norm_eps: 1e-12,
        init_std: 0.3,
        max_seq_len: 16,
        vocab_size: 50,
    }
}

/// A fixed batch exercising repeated tokens, several labels and two lengths.
pub fn small_batch() -> Vec<(Vec<u32>, Vec<(usize, u32)>)> {
    vec![
        (vec![3, 17, 2, 25, 2, 4], vec![(2, 9), (4, 31), (1, 17)]),
        (vec![3, 44, 8, 8, 2, 12, 40, 4], vec![(4, 6), (6, 40)]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match() {
        let report = grad_check(small_config(), 7, &small_batch(), 1e-5, 1).unwrap();
        for b in &report.blocks {
            println!("{:<28} {:.2e}", b.name, b.max_rel_err);
            assert!(b.max_rel_err < 1e-4, "{}: {:e}", b.name, b.max_rel_err);
        }
        // Every block actually receives gradient signal.
        for b in &report.blocks {
            assert!(b.max_abs_grad > 1e-6, "{} has no gradient", b.name);
        }
    }

    #[test]
    fn packing_matches_one_at_a_time() {
        let m: Model<f64> = Model::new(small_config(), 2).unwrap();
        let batch = small_batch();
        let mut solo = m.zero_grads();
        let mut solo_loss = 0.0;
        for (ids, l) in &batch {
            solo_loss += m.loss_and_grad(ids, l, 0.5, None, &mut solo).unwrap();
        }
        let packed: Vec<(&[u32], &[(usize, u32)])> = batch.iter().map(|(i, l)| (&i[..], &l[..])).collect();
        let mut together = m.zero_grads();
        let loss = m.loss_and_grad_batch(&packed, 0.5, None, &mut together).unwrap();
        assert!((loss - solo_loss).abs() < 1e-12);
        for (a, b) in solo.iter().zip(&together) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_same_mean_loss() {
        let m: Model<f64> = Model::new(small_config(), 1).unwrap();
        let (ids, labels) = &small_batch()[0];
        let mut g = m.zero_grads();
        let one = m.loss_and_grad(ids, labels, 1.0, None, &mut g).unwrap() / labels.len() as f64;
        let two = 2.0 * m.loss_and_grad(ids, labels, 1.0, None, &mut g).unwrap() / (2 * labels.len()) as f64;
        assert!((one - two).abs() < 1e-12);
    }
}
