//! Grayscale image grids, boundary access, quality metrics and dihedral
//! augmentation.
//!
//! Intensities are stored as `f64` normalized to `[0, 1]` (8-bit inputs are
//! divided by 255). PSNR therefore uses a peak of 1, which is numerically
//! identical to the 8-bit convention `10·log10(255² / MSE₂₅₅)`.

use crate::error::{Error, Result};

/// Row-major scalar field of `height × width` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Pixel position: `x` indexes rows, `y` indexes columns. Signed so that
/// off-grid neighbors can be expressed before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelCoord {
    pub x: isize,
    pub y: isize,
}

impl PixelCoord {
    pub const fn new(x: isize, y: isize) -> Self {
        Self { x, y }
    }

    pub fn offset(self, o: NeighborOffset) -> Self {
        Self::new(self.x + o.di as isize, self.y + o.dj as isize)
    }

    /// Chebyshev (chessboard) distance.
    pub fn chebyshev(self, other: Self) -> usize {
        (self.x - other.x)
            .unsigned_abs()
            .max((self.y - other.y).unsigned_abs())
    }
}

/// One element of the 3×3 neighborhood `{-1, 0, 1}²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeighborOffset {
    pub di: i8,
    pub dj: i8,
}

impl NeighborOffset {
    pub const CENTER: NeighborOffset = NeighborOffset { di: 0, dj: 0 };

    pub fn new(di: i8, dj: i8) -> Result<Self> {
        if !(-1..=1).contains(&di) || !(-1..=1).contains(&dj) {
            return Err(Error::Argument(format!(
                "neighbor offset ({di}, {dj}) outside the 3x3 window"
            )));
        }
        Ok(Self { di, dj })
    }

    /// All nine offsets in row-major order, `(-1,-1)` first.
    pub fn window() -> impl Iterator<Item = NeighborOffset> {
        (-1i8..=1).flat_map(|di| (-1i8..=1).map(move |dj| NeighborOffset { di, dj }))
    }
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Argument(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for x in 0..height {
            for y in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.width + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[x * self.width + y] = v;
    }

    /// Value at `p` with replicate (clamp-to-edge) padding.
    #[inline]
    pub fn reflect_pixel(&self, p: PixelCoord) -> f64 {
        let (x, y) = self.clamp_coord(p);
        self.get(x, y)
    }

    #[inline]
    pub fn clamp_coord(&self, p: PixelCoord) -> (usize, usize) {
        (
            p.x.clamp(0, self.height as isize - 1) as usize,
            p.y.clamp(0, self.width as isize - 1) as usize,
        )
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.height && (p.y as usize) < self.width
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> ImageGrid {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Copies the `h × w` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, h: usize, w: usize) -> Result<ImageGrid> {
        if h == 0 || w == 0 || x0 + h > self.height || y0 + w > self.width {
            return Err(Error::Argument(format!(
                "crop {h}x{w} at ({x0}, {y0}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(ImageGrid::from_fn(h, w, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Applies one of the eight dihedral symmetries.
    pub fn augment(&self, t: Dihedral) -> ImageGrid {
        let (h, w) = self.shape();
        let (oh, ow) = if t.swaps_axes() { (w, h) } else { (h, w) };
        let mut out = ImageGrid::filled(oh, ow, 0.0);
        for x in 0..h {
            for y in 0..w {
                let (nx, ny) = t.map_coord(x, y, h, w);
                out.set(nx, ny, self.get(x, y));
            }
        }
        out
    }
}

/// Mean squared error between equally shaped grids.
pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak intensity 1.
///
/// Returns `f64::INFINITY` when the images are identical.
pub fn psnr(test: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let e = mse(test, reference)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(psnr_from_mse(e))
}

#[inline]
pub fn psnr_from_mse(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

/// The dihedral group of the square, indexed `0..8`.
///
/// Index `k` decomposes as `k = 4·flip + rot`: first rotate clockwise by
/// `rot · 90°`, then (if `flip`) mirror left-right. Index 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);
    pub const ROT90: Dihedral = Dihedral(1);
    pub const ROT180: Dihedral = Dihedral(2);
    pub const ROT270: Dihedral = Dihedral(3);
    pub const FLIP_LR: Dihedral = Dihedral(4);

    pub fn new(index: usize) -> Result<Self> {
        if index >= 8 {
            return Err(Error::Argument(format!(
                "dihedral transform index {index} not in 0..8"
            )));
        }
        Ok(Dihedral(index as u8))
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn rot(self) -> u8 {
        self.0 % 4
    }

    fn flip(self) -> bool {
        self.0 >= 4
    }

    pub fn swaps_axes(self) -> bool {
        self.rot() % 2 == 1
    }

    /// Where input pixel `(x, y)` of an `h × w` grid lands.
    pub fn map_coord(self, mut x: usize, mut y: usize, h: usize, w: usize) -> (usize, usize) {
        let (mut ch, mut cw) = (h, w);
        for _ in 0..self.rot() {
            // clockwise quarter turn: (x, y) -> (y, H-1-x), shape HxW -> WxH
            let nx = y;
            let ny = ch - 1 - x;
            x = nx;
            y = ny;
            std::mem::swap(&mut ch, &mut cw);
        }
        if self.flip() {
            y = cw - 1 - y;
        }
        (x, y)
    }

    pub fn inverse(self) -> Dihedral {
        if self.flip() {
            // reflections are involutions
            self
        } else {
            Dihedral((4 - self.rot()) % 4)
        }
    }
}
