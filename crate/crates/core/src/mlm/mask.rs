use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MaskingPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSeq {
    pub ids: Vec<u32>,
    /// (position, original token) for every selected position.
    pub labels: Vec<(usize, u32)>,
}

/// Selects positions where `eligible` holds and applies the replacement split.
/// Random replacements are drawn uniformly from `random_pool`.
pub fn mask_sequence<R: Rng>(
    policy: &MaskingPolicy,
    ids: &[u32],
    eligible: impl Fn(u32) -> bool,
    mask_id: u32,
    random_pool: &[u32],
    rng: &mut R,
) -> MaskedSeq {
    let mut out = ids.to_vec();
    let mut labels = Vec::new();
    for (t, &id) in ids.iter().enumerate() {
        if !eligible(id) || rng.random::<f64>() >= policy.mask_rate {
            continue;
        }
        labels.push((t, id));
        let r = rng.random::<f64>();
        if r < policy.replace_mask {
            out[t] = mask_id;
        } else if r < policy.replace_mask + policy.replace_random && !random_pool.is_empty() {
            out[t] = random_pool[rng.random_range(0..random_pool.len())];
        }
    }
    MaskedSeq { ids: out, labels }
}
