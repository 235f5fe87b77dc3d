//! Convolutional returns and advantages.
//!
//! A neighbor-coupled return lets each agent credit the future returns of
//! the agents around it:
//!
//! ```text
//! G(t) = r(t) + γ · (ω ⋆ G(t+1)),    G(T) = 0
//! (ω ⋆ G)(x, y) = Σ_{(i,j) ∈ {-1,0,1}²} ω(i, j) · G(x+i, y+j)
//! ```
//!
//! with replicate padding at the borders. With the identity kernel this is the
//! ordinary per-pixel discounted return.

use crate::error::{Error, Result};
use crate::image::{ImageGrid, NeighborOffset, PixelCoord};

/// 3×3 kernel ω over neighbor offsets, row-major from `(-1,-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConvKernel {
    pub weights: [f64; 9],
    pub learnable: bool,
}

impl Default for RewardConvKernel {
    fn default() -> Self {
        Self::identity()
    }
}

impl RewardConvKernel {
    pub fn identity() -> Self {
        let mut weights = [0.0; 9];
        weights[4] = 1.0;
        Self {
            weights,
            learnable: false,
        }
    }

    pub fn new(weights: [f64; 9], learnable: bool) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(
                "reward kernel has non-finite entries".into(),
            ));
        }
        Ok(Self { weights, learnable })
    }

    pub fn at(&self, o: NeighborOffset) -> f64 {
        self.weights[((o.di + 1) * 3 + (o.dj + 1)) as usize]
    }

    pub fn is_identity(&self) -> bool {
        self.weights == Self::identity().weights
    }

    /// `ω ⋆ g` with replicate padding.
    pub fn apply(&self, g: &ImageGrid) -> ImageGrid {
        if self.is_identity() {
            return g.clone();
        }
        ImageGrid::from_fn(g.height(), g.width(), |x, y| {
            let p = PixelCoord::new(x as isize, y as isize);
            NeighborOffset::window()
                .zip(&self.weights)
                .filter(|(_, &w)| w != 0.0)
                .map(|(o, &w)| w * g.reflect_pixel(p.offset(o)))
                .sum()
        })
    }

    /// Gradient of `⟨cot, ω ⋆ g⟩` with respect to the nine weights.
    pub fn weight_gradient(cot: &ImageGrid, g: &ImageGrid) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (k, o) in NeighborOffset::window().enumerate() {
            let mut s = 0.0;
            for x in 0..g.height() {
                for y in 0..g.width() {
                    let c = cot.get(x, y);
                    if c != 0.0 {
                        s += c * g.reflect_pixel(PixelCoord::new(x as isize, y as isize).offset(o));
                    }
                }
            }
            out[k] = s;
        }
        out
    }

    /// Rescales the weights to sum to one (no-op when the sum is zero).
    pub fn normalize(&mut self) {
        let s: f64 = self.weights.iter().sum();
        if s != 0.0 {
            self.weights.iter_mut().for_each(|w| *w /= s);
        }
    }
}

/// Discounted per-pixel return `G(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMap(pub ImageGrid);

/// Per-pixel advantage of the chosen actions at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageMap(pub ImageGrid);

/// Backward recursion over reward maps `r(0..T)`; returns `G(0..T)`.
pub fn returns_from_rewards(
    rewards: &[&ImageGrid],
    gamma: f64,
    omega: &RewardConvKernel,
) -> Result<Vec<ReturnMap>> {
    let Some(first) = rewards.first() else {
        return Ok(Vec::new());
    };
    for r in rewards {
        first.ensure_same_shape(r)?;
    }
    let mut out =
        vec![ReturnMap(ImageGrid::filled(first.height(), first.width(), 0.0)); rewards.len()];
    let mut next: Option<ImageGrid> = None;
    for t in (0..rewards.len()).rev() {
        let g = match &next {
            None => rewards[t].clone(),
            Some(n) => {
                let conv = omega.apply(n);
                let mut g = rewards[t].clone();
                for (v, c) in g.data_mut().iter_mut().zip(conv.data()) {
                    *v += gamma * c;
                }
                g
            }
        };
        out[t] = ReturnMap(g.clone());
        next = Some(g);
    }
    Ok(out)
}

/// Returns of a recorded episode, from its reward maps.
pub fn compute_returns(
    trace: &crate::env::EpisodeTrace,
    gamma: f64,
    omega: &RewardConvKernel,
) -> Result<Vec<ReturnMap>> {
    let rewards: Vec<&ImageGrid> = trace.rewards()?.into_iter().map(|r| r.grid()).collect();
    returns_from_rewards(&rewards, gamma, omega)
}

/// One-step targets `y(t) = r(t) + γ · ω ⋆ V(s(t+1))`, taking the value of the
/// terminal state as zero.
pub fn bootstrap_targets(
    rewards: &[&ImageGrid],
    values: &[&ImageGrid],
    gamma: f64,
    omega: &RewardConvKernel,
) -> Result<Vec<ImageGrid>> {
    if rewards.len() != values.len() {
        return Err(Error::Argument(format!(
            "{} reward maps but {} value maps",
            rewards.len(),
            values.len()
        )));
    }
    (0..rewards.len())
        .map(|t| {
            rewards[t].ensure_same_shape(values[t])?;
            let mut y = rewards[t].clone();
            if t + 1 < values.len() {
                let conv = omega.apply(values[t + 1]);
                for (v, c) in y.data_mut().iter_mut().zip(conv.data()) {
                    *v += gamma * c;
                }
            }
            Ok(y)
        })
        .collect()
}

/// `A = target − V(s)`.
pub fn advantage(target: &ImageGrid, value: &ImageGrid) -> Result<AdvantageMap> {
    target.ensure_same_shape(value)?;
    let data = target
        .data()
        .iter()
        .zip(value.data())
        .map(|(a, b)| a - b)
        .collect();
    Ok(AdvantageMap(ImageGrid::new(
        target.height(),
        target.width(),
        data,
    )?))
}
