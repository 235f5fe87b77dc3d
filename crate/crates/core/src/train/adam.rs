//! Adam with bias correction, linear learning-rate decay and global-norm
//! clipping.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update. Non-finite gradients abort before anything is modified.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != opt.m.len() {
        return Err(Error::Argument(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            opt.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at parameter {i}"
        )));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        let mhat = opt.m[i] / bc1;
        let vhat = opt.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + opt.eps);
    }
    Ok(())
}

/// `lr0 · (1 − i/Q)`, reaching zero at `i = Q`.
pub fn lr_schedule(episode: usize, total: usize, lr0: f64) -> f64 {
    if episode >= total {
        return 0.0;
    }
    lr0 * (1.0 - episode as f64 / total as f64)
}

/// Scales all gradient slices jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping. `max_norm <= 0` disables it.
pub fn clip_global_norm(groups: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in groups.iter_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
