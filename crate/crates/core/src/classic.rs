//! Explicit Perona–Malik diffusion on the 3×3 neighborhood.
//!
//! One step is `u ← u + κ(∇d·∇u + d·Δu)` with `d = h(‖∇u‖)`. Discretized,
//! every output pixel is a weighted sum of its 3×3 input neighborhood:
//!
//! * center weight `1 − κ·d`,
//! * off-center weight `κ·d/8 + κ·(i·∂ₓd + j·∂ᵧd)/6` for offset `(i, j)`.
//!
//! `Δu` is the normalized 8-neighbor Laplacian `mean₈(u) − u` and `∇u` in the
//! drift term is the Prewitt gradient scaled by 1/6. Since the offsets sum to
//! zero over the ring, the weights of every pixel sum to exactly one
//! ([`StencilScheme::Balanced`]).
//!
//! [`StencilScheme::Verbatim`] instead multiplies the drift term by the
//! neighbor's diffusivity `d(x+i, y+j)`. That variant does not preserve the
//! sum-to-one property and is kept for comparison only.
//!
//! Gradients of `u` (inside `h`) and of `d` use central differences with
//! replicate boundaries.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{ImageGrid, NeighborOffset, PixelCoord};

/// Largest step size accepted by [`DiffusionConfig::validate`].
pub const KAPPA_STABLE_MAX: f64 = 0.25;

/// Smallest edge contrast for which the Perona-Malik stencil is nonnegative
/// on every image with values in [0, 1], for any accepted κ. Below it the
/// drift term can outweigh the diffusion term near sharp edges and the step
/// may overshoot its neighborhood.
pub const CONTRAST_CONVEX_MIN: f64 = 0.8165;

/// `h(z) = 1 / (1 + z²)`.
#[inline]
pub fn pm_diffusivity(grad_mag: f64) -> f64 {
    1.0 / (1.0 + grad_mag * grad_mag)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diffusivity {
    /// Perona–Malik `h(‖∇u‖ / contrast)`.
    PeronaMalik { contrast: f64 },
    /// `h ≡ 1`, isotropic linear diffusion.
    Linear,
}

impl Diffusivity {
    #[inline]
    pub fn eval(&self, grad_mag: f64) -> f64 {
        match *self {
            Diffusivity::PeronaMalik { contrast } => pm_diffusivity(grad_mag / contrast),
            Diffusivity::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StencilScheme {
    #[default]
    Balanced,
    Verbatim,
}

impl FromStr for StencilScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(StencilScheme::Balanced),
            "verbatim" => Ok(StencilScheme::Verbatim),
            _ => Err(Error::Argument(format!("unknown stencil scheme `{s}`"))),
        }
    }
}

impl fmt::Display for StencilScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StencilScheme::Balanced => "balanced",
            StencilScheme::Verbatim => "verbatim",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionConfig {
    pub kappa: f64,
    pub iterations: usize,
    pub diffusivity: Diffusivity,
    pub scheme: StencilScheme,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            kappa: 0.2,
            iterations: 20,
            diffusivity: Diffusivity::PeronaMalik { contrast: 1.0 },
            scheme: StencilScheme::Balanced,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=KAPPA_STABLE_MAX).contains(&self.kappa) {
            return Err(Error::Argument(format!(
                "kappa {} outside the stable range [0, {KAPPA_STABLE_MAX}]",
                self.kappa
            )));
        }
        if let Diffusivity::PeronaMalik { contrast } = self.diffusivity {
            if !(contrast > 0.0 && contrast.is_finite()) {
                return Err(Error::Argument(format!(
                    "contrast {contrast} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Per-pixel 3×3 weights, row-major over offsets `(-1,-1) … (1,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilWeights {
    height: usize,
    width: usize,
    weights: Vec<[f64; 9]>,
    /// Weights sum to one by construction; apply in residual form so that
    /// constant regions are reproduced exactly.
    normalized: bool,
}

impl StencilWeights {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64; 9] {
        &self.weights[x * self.width + y]
    }

    pub fn weight(&self, x: usize, y: usize, o: NeighborOffset) -> f64 {
        self.at(x, y)[window_index(o)]
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().flatten().all(|&w| w >= 0.0)
    }

    pub fn apply(&self, u: &ImageGrid) -> Result<ImageGrid> {
        if u.shape() != self.shape() {
            return Err(Error::Dimension {
                expected: self.shape(),
                actual: u.shape(),
            });
        }
        Ok(ImageGrid::from_fn(self.height, self.width, |x, y| {
            let w = self.at(x, y);
            let p = PixelCoord::new(x as isize, y as isize);
            if self.normalized {
                let c = u.get(x, y);
                c + NeighborOffset::window()
                    .zip(w)
                    .filter(|(o, _)| *o != NeighborOffset::CENTER)
                    .map(|(o, &wk)| wk * (u.reflect_pixel(p.offset(o)) - c))
                    .sum::<f64>()
            } else {
                NeighborOffset::window()
                    .zip(w)
                    .map(|(o, &wk)| wk * u.reflect_pixel(p.offset(o)))
                    .sum()
            }
        }))
    }
}

#[inline]
fn window_index(o: NeighborOffset) -> usize {
    ((o.di + 1) * 3 + (o.dj + 1)) as usize
}

/// Central-difference gradient `(∂ₓ, ∂ᵧ)` with replicate boundaries.
fn central_gradient(u: &ImageGrid, x: usize, y: usize) -> (f64, f64) {
    let p = PixelCoord::new(x as isize, y as isize);
    let gx = 0.5
        * (u.reflect_pixel(PixelCoord::new(p.x + 1, p.y))
            - u.reflect_pixel(PixelCoord::new(p.x - 1, p.y)));
    let gy = 0.5
        * (u.reflect_pixel(PixelCoord::new(p.x, p.y + 1))
            - u.reflect_pixel(PixelCoord::new(p.x, p.y - 1)));
    (gx, gy)
}

pub fn diffusivity_field(u: &ImageGrid, h: Diffusivity) -> ImageGrid {
    ImageGrid::from_fn(u.height(), u.width(), |x, y| {
        let (gx, gy) = central_gradient(u, x, y);
        h.eval((gx * gx + gy * gy).sqrt())
    })
}

pub fn compute_stencil(u: &ImageGrid, cfg: &DiffusionConfig) -> StencilWeights {
    let d = diffusivity_field(u, cfg.diffusivity);
    let k = cfg.kappa;
    let mut weights = Vec::with_capacity(u.len());
    for x in 0..u.height() {
        for y in 0..u.width() {
            let dc = d.get(x, y);
            let (ddx, ddy) = central_gradient(&d, x, y);
            let p = PixelCoord::new(x as isize, y as isize);
            let mut w = [0.0; 9];
            for o in NeighborOffset::window() {
                w[window_index(o)] = if o == NeighborOffset::CENTER {
                    1.0 - k * dc
                } else {
                    let drift = (o.di as f64 * ddx + o.dj as f64 * ddy) / 6.0;
                    let drift = match cfg.scheme {
                        StencilScheme::Balanced => drift,
                        StencilScheme::Verbatim => drift * d.reflect_pixel(p.offset(o)),
                    };
                    k * dc / 8.0 + k * drift
                };
            }
            weights.push(w);
        }
    }
    StencilWeights {
        height: u.height(),
        width: u.width(),
        weights,
        normalized: cfg.scheme == StencilScheme::Balanced,
    }
}

/// One explicit step through the weighted-sum (stencil) route.
pub fn pm_step(u: &ImageGrid, cfg: &DiffusionConfig) -> ImageGrid {
    compute_stencil(u, cfg)
        .apply(u)
        .expect("stencil built from u has u's shape")
}

/// One explicit step evaluated directly as `u + κ(∇d·∇u + d·Δu)`, without
/// assembling weights. Agrees with [`pm_step`] under the balanced scheme.
pub fn pm_step_expanded(u: &ImageGrid, cfg: &DiffusionConfig) -> ImageGrid {
    let d = diffusivity_field(u, cfg.diffusivity);
    ImageGrid::from_fn(u.height(), u.width(), |x, y| {
        let p = PixelCoord::new(x as isize, y as isize);
        let at = |i: isize, j: isize| u.reflect_pixel(PixelCoord::new(p.x + i, p.y + j));
        let mut ring = 0.0;
        let mut prewitt_x = 0.0;
        let mut prewitt_y = 0.0;
        for i in -1..=1 {
            for j in -1..=1 {
                if i == 0 && j == 0 {
                    continue;
                }
                let v = at(i, j);
                ring += v;
                prewitt_x += i as f64 * v;
                prewitt_y += j as f64 * v;
            }
        }
        let center = at(0, 0);
        let laplacian = ring / 8.0 - center;
        let (ddx, ddy) = central_gradient(&d, x, y);
        let drift = ddx * prewitt_x / 6.0 + ddy * prewitt_y / 6.0;
        center + cfg.kappa * (drift + d.get(x, y) * laplacian)
    })
}

/// Runs `cfg.iterations` steps starting from `g`.
pub fn pm_denoise(g: &ImageGrid, cfg: &DiffusionConfig) -> ImageGrid {
    let mut u = g.clone();
    for _ in 0..cfg.iterations {
        u = pm_step(&u, cfg);
    }
    u
}
