//! Greedy denoising, evaluation over a corpus, and visualization rasters.

use rayon::prelude::*;

use crate::classic::{pm_denoise, DiffusionConfig};
use crate::corpus::Corpus;
use crate::env::{
    run_episode, ActionMap, BoundaryMode, CompositeKernel, DiffusionAction, EpisodeTrace,
    NUM_ACTIONS,
};
use crate::error::{Error, Result};
use crate::image::{psnr, ImageGrid};
use crate::net::{NetworkParams, MAX_PIXELS};
use crate::noise::{noisy_observation, NoiseSpec};
use crate::pnm::RgbImage;
use crate::train::greedy_actions;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    pub denoised: ImageGrid,
    pub action_maps: Vec<ActionMap>,
    pub psnr_vs_truth: Option<f64>,
    pub trace: EpisodeTrace,
}

/// `t_max` greedy steps: per-pixel argmax action, lowest index on ties.
pub fn denoise(g: &ImageGrid, net: &NetworkParams, t_max: usize) -> Result<DenoiseResult> {
    denoise_with(g, None, net, t_max, BoundaryMode::Replicate)
}

/// Like [`denoise`], also scoring against `truth` when given.
pub fn denoise_with(
    g: &ImageGrid,
    truth: Option<&ImageGrid>,
    net: &NetworkParams,
    t_max: usize,
    boundary: BoundaryMode,
) -> Result<DenoiseResult> {
    if g.len() > MAX_PIXELS {
        return Err(Error::Argument(format!(
            "{}x{} image exceeds the {MAX_PIXELS}-pixel limit",
            g.height(),
            g.width()
        )));
    }
    let trace = run_episode(g, truth, t_max, boundary, |_, u| {
        let (policy, _) = net.forward(u)?;
        Ok(greedy_actions(&policy))
    })?;
    let psnr_vs_truth = truth.map(|f| psnr(&trace.final_state, f)).transpose()?;
    Ok(DenoiseResult {
        denoised: trace.final_state.clone(),
        action_maps: trace.action_maps().cloned().collect(),
        psnr_vs_truth,
        trace,
    })
}

/// Every pixel takes `action` at every one of `t_max` steps.
pub fn fixed_action_denoise(
    g: &ImageGrid,
    action: DiffusionAction,
    t_max: usize,
) -> Result<ImageGrid> {
    let (h, w) = g.shape();
    let map = ActionMap::filled(h, w, action);
    let trace = run_episode(g, None, t_max, BoundaryMode::Replicate, |_, _| {
        Ok(map.clone())
    })?;
    Ok(trace.final_state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub noisy_psnr: f64,
    pub denoised_psnr: f64,
    /// Perona–Malik baseline, when requested.
    pub baseline_psnr: Option<f64>,
}

/// Noise seed for the image at manifest position `index`.
pub fn eval_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Noisy and denoised PSNR for every image, in corpus order.
pub fn evaluate_corpus(
    corpus: &Corpus,
    net: &NetworkParams,
    noise: &NoiseSpec,
    base_seed: u64,
    t_max: usize,
    baseline: Option<&DiffusionConfig>,
) -> Result<Vec<EvalRow>> {
    if let Some(b) = baseline {
        b.validate()?;
    }
    noise.validate()?;
    (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let clean = &corpus.images[i];
            let noisy = noisy_observation(clean, noise, eval_seed(base_seed, i))?;
            let res = denoise_with(&noisy, Some(clean), net, t_max, BoundaryMode::Replicate)?;
            let baseline_psnr = baseline
                .map(|cfg| psnr(&pm_denoise(&noisy, cfg), clean))
                .transpose()?;
            Ok(EvalRow {
                name: corpus.names[i].clone(),
                noisy_psnr: psnr(&noisy, clean)?,
                denoised_psnr: res.psnr_vs_truth.expect("truth supplied"),
                baseline_psnr,
            })
        })
        .collect()
}

/// Column means of `rows` (baseline mean only if every row has one).
pub fn eval_means(rows: &[EvalRow]) -> (f64, f64, Option<f64>) {
    let n = rows.len() as f64;
    let noisy = rows.iter().map(|r| r.noisy_psnr).sum::<f64>() / n;
    let den = rows.iter().map(|r| r.denoised_psnr).sum::<f64>() / n;
    let base = rows
        .iter()
        .map(|r| r.baseline_psnr)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n);
    (noisy, den, base)
}

/// Colors for actions 0..9. Do-nothing is white; the eight averaging
/// actions sit on a hue wheel in 45° steps matching their direction,
/// starting with red for east and turning counter-clockwise.
pub const ACTION_PALETTE: [[u8; 3]; NUM_ACTIONS] = [
    [255, 255, 255],
    [255, 0, 0],   // E
    [255, 191, 0], // NE
    [128, 255, 0], // N
    [0, 255, 64],  // NW
    [0, 255, 255], // W
    [0, 64, 255],  // SW
    [128, 0, 255], // S
    [255, 0, 191], // SE
];

pub fn render_action_map(a: &ActionMap) -> RgbImage {
    RgbImage {
        height: a.height(),
        width: a.width(),
        pixels: a
            .indices()
            .iter()
            .map(|&k| ACTION_PALETTE[k as usize])
            .collect(),
    }
}

/// Kernel weights over the support's bounding box, each cell `zoom` pixels
/// wide and scaled so the largest weight is white. For `zoom >= 3` the anchor
/// cell gets a mid-gray border.
pub fn render_kernel(k: &CompositeKernel, zoom: usize) -> Result<ImageGrid> {
    if zoom == 0 {
        return Err(Error::Argument("zoom must be positive".into()));
    }
    let (lo, hi) = k.bounding_box();
    let bh = (hi.x - lo.x + 1) as usize;
    let bw = (hi.y - lo.y + 1) as usize;
    let max = k.weights.values().cloned().fold(0.0f64, f64::max);
    let mut out = ImageGrid::filled(bh * zoom, bw * zoom, 0.0);
    for (p, &w) in &k.weights {
        let v = if max > 0.0 { w / max } else { 0.0 };
        let (cx, cy) = ((p.x - lo.x) as usize * zoom, (p.y - lo.y) as usize * zoom);
        for dx in 0..zoom {
            for dy in 0..zoom {
                out.set(cx + dx, cy + dy, v);
            }
        }
    }
    if zoom >= 3 {
        let (ax, ay) = (
            (k.anchor.x - lo.x) as usize * zoom,
            (k.anchor.y - lo.y) as usize * zoom,
        );
        for d in 0..zoom {
            for (x, y) in [
                (ax, ay + d),
                (ax + zoom - 1, ay + d),
                (ax + d, ay),
                (ax + d, ay + zoom - 1),
            ] {
                out.set(x, y, 0.5);
            }
        }
    }
    Ok(out)
}
