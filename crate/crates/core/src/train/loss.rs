//! Actor-critic objectives over a recorded episode.
//!
//! * value loss `Σ_t ‖y(t) − V(s(t))‖²_F` with the targets `y` held constant;
//! * policy objective `Σ_t Σ_px [log π(a|s(t)) · A + β · H(π(·|s(t)))]`,
//!   with the advantages held constant. Its gradient is returned negated so
//!   both gradients are descent directions.

use crate::env::{ActionMap, EpisodeTrace, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::net::{ForwardCache, GradientSet, NetworkParams, PolicyMap};
use crate::train::returns::AdvantageMap;

/// Objective contribution and logit cotangent (of the negated objective,
/// multiplied by `scale`) for one step.
pub(crate) fn policy_cotangent(
    policy: &PolicyMap,
    actions: &ActionMap,
    advantage: &ImageGrid,
    entropy_beta: f64,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    if policy.shape() != actions.shape() || policy.shape() != advantage.shape() {
        return Err(Error::Dimension {
            expected: policy.shape(),
            actual: if policy.shape() != actions.shape() {
                actions.shape()
            } else {
                advantage.shape()
            },
        });
    }
    let mut objective = 0.0;
    let mut cot = vec![0.0; policy.probs().len()];
    for (px, ((&a, &adv), out)) in actions
        .indices()
        .iter()
        .zip(advantage.data())
        .zip(cot.chunks_exact_mut(NUM_ACTIONS))
        .enumerate()
    {
        let p = &policy.probs()[px * NUM_ACTIONS..(px + 1) * NUM_ACTIONS];
        let lp = &policy.log_probs()[px * NUM_ACTIONS..(px + 1) * NUM_ACTIONS];
        let chosen = lp[a as usize];
        if !chosen.is_finite() || p[a as usize] == 0.0 {
            return Err(Error::Numeric(format!(
                "chosen action {a} has zero probability at pixel {px}"
            )));
        }
        // entropy with 0·log 0 = 0
        let entropy: f64 = -p
            .iter()
            .zip(lp)
            .filter(|(&q, _)| q > 0.0)
            .map(|(q, l)| q * l)
            .sum::<f64>();
        objective += chosen * adv + entropy_beta * entropy;
        for k in 0..NUM_ACTIONS {
            let onehot = if k == a as usize { 1.0 } else { 0.0 };
            let d_logp = adv * (onehot - p[k]);
            let d_entropy = if p[k] > 0.0 {
                -p[k] * (lp[k] + entropy)
            } else {
                0.0
            };
            out[k] = -scale * (d_logp + entropy_beta * d_entropy);
        }
    }
    Ok((objective, cot))
}

/// Squared error against `target` and the value cotangent of it, times `scale`.
pub(crate) fn value_cotangent(
    value: &ImageGrid,
    target: &ImageGrid,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    value.ensure_same_shape(target)?;
    let mut loss = 0.0;
    let cot = value
        .data()
        .iter()
        .zip(target.data())
        .map(|(&v, &y)| {
            let d = y - v;
            loss += d * d;
            -2.0 * scale * d
        })
        .collect();
    Ok((loss, cot))
}

fn caches(params: &NetworkParams, trace: &EpisodeTrace) -> Result<Vec<ForwardCache>> {
    trace
        .steps
        .iter()
        .map(|s| params.forward_cached(&s.state))
        .collect()
}

/// Value loss and its parameter gradient for fixed per-step targets.
pub fn value_loss_grad(
    params: &NetworkParams,
    trace: &EpisodeTrace,
    targets: &[ImageGrid],
) -> Result<(f64, GradientSet)> {
    if targets.len() != trace.len() {
        return Err(Error::Argument(format!(
            "{} targets for a {}-step trace",
            targets.len(),
            trace.len()
        )));
    }
    let mut grads = params.zero_grad();
    let mut total = 0.0;
    for (cache, y) in caches(params, trace)?.iter().zip(targets) {
        let (loss, vcot) = value_cotangent(cache.value.grid(), y, 1.0)?;
        total += loss;
        let zero = vec![0.0; vcot.len() * NUM_ACTIONS];
        params.backward_logits(cache, &zero, &vcot, &mut grads)?;
    }
    Ok((total, grads))
}

/// Policy objective and the gradient of its negation.
pub fn policy_loss_grad(
    params: &NetworkParams,
    trace: &EpisodeTrace,
    advantages: &[AdvantageMap],
    entropy_beta: f64,
) -> Result<(f64, GradientSet)> {
    if advantages.len() != trace.len() {
        return Err(Error::Argument(format!(
            "{} advantage maps for a {}-step trace",
            advantages.len(),
            trace.len()
        )));
    }
    let mut grads = params.zero_grad();
    let mut total = 0.0;
    for ((cache, step), adv) in caches(params, trace)?
        .iter()
        .zip(&trace.steps)
        .zip(advantages)
    {
        let (obj, lcot) =
            policy_cotangent(&cache.policy, &step.actions, &adv.0, entropy_beta, 1.0)?;
        total += obj;
        let zero = vec![0.0; lcot.len() / NUM_ACTIONS];
        params.backward_logits(cache, &lcot, &zero, &mut grads)?;
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{run_episode, BoundaryMode};
    use crate::net::NetConfig;
    use crate::train::sample::sample_actions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (NetworkParams, EpisodeTrace) {
        let mut p = NetworkParams::init(NetConfig {
            trunk_layers: 2,
            trunk_channels: 3,
            shared_trunk: true,
            init_seed: seed,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let g = ImageGrid::from_fn(5, 5, |_, _| rng.random());
        let f = ImageGrid::from_fn(5, 5, |_, _| rng.random());
        let q = p.clone();
        let tr = run_episode(&g, Some(&f), 3, BoundaryMode::Replicate, |t, u| {
            let (pi, _) = q.forward(u)?;
            sample_actions(&pi, seed * 10 + t as u64)
        })
        .unwrap();
        (p, tr)
    }

    #[test]
    fn perfect_values_give_zero_loss() {
        let (p, tr) = setup(1);
        let targets: Vec<_> = tr
            .steps
            .iter()
            .map(|s| p.forward(&s.state).unwrap().1 .0)
            .collect();
        let (loss, g) = value_loss_grad(&p, &tr, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_advantage_without_entropy_has_zero_gradient() {
        let (p, tr) = setup(2);
        let adv: Vec<_> = (0..3)
            .map(|_| AdvantageMap(ImageGrid::filled(5, 5, 0.0)))
            .collect();
        let (obj, g) = policy_loss_grad(&p, &tr, &adv, 0.0).unwrap();
        assert_eq!(obj, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_advantage_shift() {
        let (p, tr) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let adv: Vec<_> = (0..3)
            .map(|_| AdvantageMap(ImageGrid::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0))))
            .collect();
        let delta = -0.05 * 0.4;
        let shifted: Vec<_> = adv
            .iter()
            .map(|a| AdvantageMap(a.0.map(|v| v + delta)))
            .collect();
        let uniform: Vec<_> = (0..3)
            .map(|_| AdvantageMap(ImageGrid::filled(5, 5, delta)))
            .collect();
        let (_, g0) = policy_loss_grad(&p, &tr, &adv, 0.01).unwrap();
        let (_, g1) = policy_loss_grad(&p, &tr, &shifted, 0.01).unwrap();
        let (_, gd) = policy_loss_grad(&p, &tr, &uniform, 0.0).unwrap();
        for ((a, b), d) in g0.values.iter().zip(&g1.values).zip(&gd.values) {
            assert!((b - a - d).abs() < 1e-12);
        }
    }

    #[test]
    fn value_loss_nonnegative() {
        let (p, tr) = setup(4);
        let targets: Vec<_> = (0..3)
            .map(|i| ImageGrid::filled(5, 5, i as f64 - 1.0))
            .collect();
        let (loss, _) = value_loss_grad(&p, &tr, &targets).unwrap();
        assert!(loss > 0.0);
        assert!(value_loss_grad(&p, &tr, &targets[..2]).is_err());
    }
}
