//! Seeded noise synthesis.
//!
//! Every generator draws from a ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and visits pixels in row-major order, so
//! the output is a pure function of `(image, level, seed)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::image::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Gaussian,
    SaltPepper,
    Poisson,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::SaltPepper => "salt_pepper",
            NoiseKind::Poisson => "poisson",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "salt_pepper" | "salt-pepper" | "sp" => Ok(NoiseKind::SaltPepper),
            "poisson" => Ok(NoiseKind::Poisson),
            _ => Err(Error::Argument(format!("unknown noise kind `{s}`"))),
        }
    }
}

/// Noise model and strength.
///
/// `level` is σ on the 0–255 scale for Gaussian noise, the corruption density
/// in `(0, 1]` for salt-and-pepper, and the peak intensity for Poisson noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
}

impl NoiseSpec {
    pub fn gaussian(sigma255: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            level: sigma255,
        }
    }

    pub fn salt_pepper(density: f64) -> Self {
        Self {
            kind: NoiseKind::SaltPepper,
            level: density,
        }
    }

    pub fn poisson(peak: f64) -> Self {
        Self {
            kind: NoiseKind::Poisson,
            level: peak,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            NoiseKind::Gaussian | NoiseKind::Poisson => self.level > 0.0 && self.level.is_finite(),
            NoiseKind::SaltPepper => self.level > 0.0 && self.level <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "invalid {} noise level {}",
                self.kind, self.level
            )))
        }
    }

    pub fn apply(&self, img: &ImageGrid, seed: u64) -> Result<ImageGrid> {
        self.validate()?;
        Ok(match self.kind {
            NoiseKind::Gaussian => add_gaussian(img, self.level, seed),
            NoiseKind::SaltPepper => add_salt_pepper(img, self.level, seed),
            NoiseKind::Poisson => add_poisson(img, self.level, seed),
        })
    }
}

/// The observation a denoiser is given: `spec` applied to `clean`, then
/// clamped to `[0, 1]` as it would be when stored in an 8-bit file.
pub fn noisy_observation(clean: &ImageGrid, spec: &NoiseSpec, seed: u64) -> Result<ImageGrid> {
    Ok(spec.apply(clean, seed)?.clamped())
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation
/// `sigma255 / 255`. The result is not clipped to `[0, 1]`.
pub fn add_gaussian(img: &ImageGrid, sigma255: f64, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = sigma255 / 255.0;
    let mut out = img.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    out
}

/// Replaces each pixel with probability `density` by 0 or 1 (equally likely).
pub fn add_salt_pepper(img: &ImageGrid, density: f64, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        // two draws per pixel regardless of outcome keeps streams aligned
        let hit: f64 = rng.random();
        let salt: bool = rng.random();
        if hit < density {
            *v = if salt { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Replaces each pixel `v` by `Poisson(v · peak) / peak`.
///
/// Sampling uses `rand_distr::Poisson`, an exact sampler (inversion for small
/// rates, transformed rejection for large ones). Pixels with `v ≤ 0` map to 0.
pub fn add_poisson(img: &ImageGrid, peak: f64, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        let lambda = *v * peak;
        *v = if lambda > 0.0 {
            let dist = Poisson::new(lambda).expect("positive finite rate");
            dist.sample(&mut rng) / peak
        } else {
            0.0
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, var)
    }

    #[test]
    fn gaussian_std_matches() {
        let img = ImageGrid::filled(256, 256, 0.5);
        let noisy = add_gaussian(&img, 25.0, 42);
        let (m, var) = variance(noisy.data());
        assert!((m - 0.5).abs() < 1e-3);
        let rel = (var.sqrt() - 25.0 / 255.0).abs() / (25.0 / 255.0);
        assert!(rel < 0.03, "relative std error {rel}");
    }

    #[test]
    fn gaussian_vanishing_sigma_and_determinism() {
        let img = ImageGrid::from_fn(8, 8, |x, y| (x * 8 + y) as f64 / 64.0);
        let tiny = add_gaussian(&img, 1e-12, 3);
        for (a, b) in tiny.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(add_gaussian(&img, 25.0, 9), add_gaussian(&img, 25.0, 9));
        assert_ne!(add_gaussian(&img, 25.0, 9), add_gaussian(&img, 25.0, 10));
    }

    #[test]
    fn gaussian_is_spatially_uncorrelated() {
        let img = ImageGrid::filled(512, 512, 0.5);
        let noisy = add_gaussian(&img, 25.0, 5);
        let d: Vec<f64> = noisy.data().iter().map(|v| v - 0.5).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for x in 0..512 {
            for y in 0..511 {
                num += d[x * 512 + y] * d[x * 512 + y + 1];
            }
        }
        for v in &d {
            den += v * v;
        }
        let rho = num / den;
        assert!(rho.abs() < 0.02, "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn salt_pepper_density() {
        let img = ImageGrid::filled(512, 512, 0.3);
        let noisy = add_salt_pepper(&img, 0.5, 1);
        let corrupted = noisy.data().iter().filter(|&&v| v != 0.3).count();
        let frac = corrupted as f64 / (512.0 * 512.0);
        assert!((frac - 0.5).abs() < 0.01, "corrupted fraction {frac}");
        for &v in noisy.data() {
            assert!(v == 0.3 || v == 0.0 || v == 1.0);
        }
        let all = add_salt_pepper(&img, 1.0, 2);
        assert!(all.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn poisson_statistics() {
        let zero = ImageGrid::filled(4, 4, 0.0);
        assert!(add_poisson(&zero, 30.0, 1).data().iter().all(|&v| v == 0.0));

        let img = ImageGrid::filled(256, 256, 0.5);
        let (_, var) = variance(add_poisson(&img, 30.0, 2).data());
        let expect = 0.5 / 30.0;
        assert!(
            (var - expect).abs() / expect < 0.05,
            "variance {var} vs {expect}"
        );

        let (m, _) = variance(add_poisson(&img, 120.0, 3).data());
        assert!((m - 0.5).abs() / 0.5 < 0.02);
        assert_eq!(add_poisson(&img, 10.0, 4), add_poisson(&img, 10.0, 4));
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec::gaussian(0.0).validate().is_err());
        assert!(NoiseSpec::salt_pepper(1.5).validate().is_err());
        assert!(NoiseSpec::salt_pepper(1.0).validate().is_ok());
        assert!(NoiseSpec::poisson(-1.0).validate().is_err());
        assert_eq!(
            "salt_pepper".parse::<NoiseKind>().unwrap(),
            NoiseKind::SaltPepper
        );
        assert!("speckle".parse::<NoiseKind>().is_err());
    }
}
