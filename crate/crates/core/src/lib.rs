//! Learned anisotropic diffusion for image denoising.
//!
//! Every pixel is an agent that, at each of a few steps, either keeps its
//! value or averages it with one of its eight neighbors. A small fully
//! convolutional policy/value network chooses the actions and is trained
//! with a pixel-wise advantage actor-critic. A classical Perona–Malik solver
//! is included as a baseline.

pub mod classic;
pub mod corpus;
pub mod env;
mod error;
pub mod image;
pub mod infer;
pub mod net;
pub mod noise;
pub mod pnm;
pub mod seeds;
pub mod train;

pub use error::{Error, Result};
pub use image::{mse, psnr, Dihedral, ImageGrid, NeighborOffset, PixelCoord};
