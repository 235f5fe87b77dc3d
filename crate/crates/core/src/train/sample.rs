use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{ActionMap, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::net::PolicyMap;

/// Draws an independent categorical action per pixel from a ChaCha8 stream
/// seeded with `seed`.
pub fn sample_actions(policy: &PolicyMap, seed: u64) -> Result<ActionMap> {
    sample_actions_with(policy, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Like [`sample_actions`] but continues an existing stream. Consumes exactly
/// one uniform draw per pixel, row-major.
pub fn sample_actions_with(policy: &PolicyMap, rng: &mut impl Rng) -> Result<ActionMap> {
    let (h, w) = policy.shape();
    let mut out = Vec::with_capacity(h * w);
    for (i, row) in policy.probs().chunks_exact(NUM_ACTIONS).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-6 || !total.is_finite() {
            return Err(Error::Numeric(format!(
                "policy at pixel {i} sums to {total}"
            )));
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if p > 0.0 {
                pick = Some(a);
                if u < acc {
                    break;
                }
            }
        }
        out.push(pick.expect("normalized row has positive mass") as u8);
    }
    ActionMap::from_indices(h, w, out)
}

/// Per-pixel argmax; ties go to the lowest action index.
pub fn greedy_actions(policy: &PolicyMap) -> ActionMap {
    let (h, w) = policy.shape();
    let idx = policy
        .probs()
        .chunks_exact(NUM_ACTIONS)
        .map(|row| {
            let mut best = 0;
            for a in 1..NUM_ACTIONS {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best as u8
        })
        .collect();
    ActionMap::from_indices(h, w, idx).expect("indices in range")
}
