//! Training/test image collections and a synthetic image generator.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::pnm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Argument(format!("unknown split `{s}`"))),
        }
    }
}

/// The PGM files of a directory in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub paths: Vec<PathBuf>,
    pub split: Split,
    pub augment: bool,
}

impl CorpusManifest {
    pub fn scan(root: impl AsRef<Path>, split: Split, augment: bool) -> Result<Self> {
        let root = root.as_ref();
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(root, e))?.path();
            let is_pgm = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
            if path.is_file() && is_pgm {
                paths.push(path);
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Corpus(format!(
                "no .pgm images in {}",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            paths,
            split,
            augment,
        })
    }
}

/// Images held in memory, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub names: Vec<String>,
    pub images: Vec<ImageGrid>,
}

impl Corpus {
    pub fn load(manifest: &CorpusManifest) -> Result<Self> {
        let images = manifest
            .paths
            .iter()
            .map(pnm::load_image)
            .collect::<Result<Vec<_>>>()?;
        let names = manifest
            .paths
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect();
        Ok(Self { names, images })
    }

    pub fn from_images(images: Vec<ImageGrid>) -> Self {
        let names = (0..images.len()).map(|i| format!("img{i:04}")).collect();
        Self { names, images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Smallest height and width over all images.
    pub fn min_shape(&self) -> Option<(usize, usize)> {
        self.images
            .iter()
            .map(|i| i.shape())
            .reduce(|a, b| (a.0.min(b.0), a.1.min(b.1)))
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.names
            .iter()
            .zip(&self.images)
            .map(|(n, img)| {
                let name = if n.ends_with(".pgm") {
                    n.clone()
                } else {
                    format!("{n}.pgm")
                };
                let p = dir.join(name);
                pnm::save_image(img, &p)?;
                Ok(p)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SyntheticStyle {
    /// Fill some regions with low-amplitude stripes instead of a constant.
    pub textured: bool,
}

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
    HalfPlane { nx: f64, ny: f64, d: f64 },
    Triangle { p: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::HalfPlane { nx, ny, d } => nx * x + ny * y >= d,
            Shape::Triangle { p } => {
                let s = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let (d0, d1, d2) = (s(p[0], p[1]), s(p[1], p[2]), s(p[2], p[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }
}

/// A piecewise-constant image with straight and curved edges, quantized to
/// the 8-bit grid so it survives a PGM round trip unchanged.
pub fn synthetic_image(height: usize, width: usize, seed: u64, style: SyntheticStyle) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let mut layers: Vec<(Shape, f64, Option<(f64, f64, f64)>)> = Vec::new();
    let n_shapes = rng.random_range(3..=6);
    for i in 0..n_shapes {
        let shape = match (i + rng.random_range(0..4)) % 4 {
            0 => {
                let (a, b) = (rng.random_range(0.0..h), rng.random_range(0.0..h));
                let (c, d) = (rng.random_range(0.0..w), rng.random_range(0.0..w));
                Shape::Rect {
                    x0: a.min(b),
                    x1: a.max(b).max(a.min(b) + 4.0),
                    y0: c.min(d),
                    y1: c.max(d).max(c.min(d) + 4.0),
                }
            }
            1 => Shape::Disk {
                cx: rng.random_range(0.0..h),
                cy: rng.random_range(0.0..w),
                r: rng.random_range(0.1..0.4) * h.min(w),
            },
            2 => {
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let (nx, ny) = (t.cos(), t.sin());
                let (px, py) = (
                    rng.random_range(0.2..0.8) * h,
                    rng.random_range(0.2..0.8) * w,
                );
                Shape::HalfPlane {
                    nx,
                    ny,
                    d: nx * px + ny * py,
                }
            }
            _ => Shape::Triangle {
                p: [
                    (rng.random_range(0.0..h), rng.random_range(0.0..w)),
                    (rng.random_range(0.0..h), rng.random_range(0.0..w)),
                    (rng.random_range(0.0..h), rng.random_range(0.0..w)),
                ],
            },
        };
        let level = rng.random_range(0.1..0.9);
        let texture = if style.textured && rng.random_bool(0.4) {
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Some((t, rng.random_range(0.3..1.2), rng.random_range(0.03..0.08)))
        } else {
            None
        };
        layers.push((shape, level, texture));
    }
    let background = rng.random_range(0.1..0.9);
    ImageGrid::from_fn(height, width, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = background;
        for (shape, level, texture) in &layers {
            if shape.contains(fx, fy) {
                v = *level;
                if let Some((theta, freq, amp)) = texture {
                    v += amp * ((fx * theta.cos() + fy * theta.sin()) * freq).sin();
                }
            }
        }
        (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
    })
}

/// `n` synthetic images with per-image seeds derived from `seed`.
pub fn synthetic_corpus(
    n: usize,
    height: usize,
    width: usize,
    seed: u64,
    style: SyntheticStyle,
) -> Corpus {
    let images = (0..n)
        .map(|i| {
            synthetic_image(
                height,
                width,
                crate::seeds::derive(&[seed, i as u64]),
                style,
            )
        })
        .collect();
    Corpus::from_images(images)
}
