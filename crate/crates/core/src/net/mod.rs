//! Fully convolutional policy/value network with hand-written gradients.
//!
//! A trunk of 3×3 convolutions with rectifiers feeds two pointwise heads: a
//! 9-channel policy head followed by a per-pixel softmax, and a 1-channel
//! value head. The trunk is shared by default; with `shared_trunk = false`
//! each head gets its own trunk. All parameters live in one flat vector so
//! that optimizers, clipping and serialization work on slices.

mod conv;
pub(crate) mod io;

pub use io::{
    load_params, load_params_expecting, read_params, save_params, write_params, PARAMS_MAGIC,
    PARAMS_VERSION,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// Largest accepted input, in pixels.
pub const MAX_PIXELS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub trunk_layers: usize,
    pub trunk_channels: usize,
    pub shared_trunk: bool,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            trunk_layers: 4,
            trunk_channels: 32,
            shared_trunk: true,
            init_seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_layers == 0 || self.trunk_channels == 0 {
            return Err(Error::Argument(
                "trunk layers and channels must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn num_trunks(&self) -> usize {
        if self.shared_trunk {
            1
        } else {
            2
        }
    }

    /// Names of fields that differ from `other`.
    pub fn mismatches(&self, other: &NetConfig) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.trunk_layers != other.trunk_layers {
            v.push("trunk_layers");
        }
        if self.trunk_channels != other.trunk_channels {
            v.push("trunk_channels");
        }
        if self.shared_trunk != other.shared_trunk {
            v.push("shared_trunk");
        }
        if self.init_seed != other.init_seed {
            v.push("init_seed");
        }
        v
    }

    /// Receptive field side length of one output pixel.
    pub fn receptive_field(&self) -> usize {
        2 * self.trunk_layers + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub offset: usize,
}

impl LayerSpec {
    fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.ksize * self.ksize
    }

    fn len(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        self.offset + self.weight_len()..self.offset + self.len()
    }
}

fn layout(cfg: &NetConfig) -> (Vec<Vec<LayerSpec>>, LayerSpec, LayerSpec, usize) {
    let mut offset = 0;
    let mut push = |in_ch, out_ch, ksize| {
        let l = LayerSpec {
            in_ch,
            out_ch,
            ksize,
            offset,
        };
        offset += l.len();
        l
    };
    let c = cfg.trunk_channels;
    let trunks = (0..cfg.num_trunks())
        .map(|_| {
            (0..cfg.trunk_layers)
                .map(|i| push(if i == 0 { 1 } else { c }, c, 3))
                .collect()
        })
        .collect();
    let policy = push(c, NUM_ACTIONS, 1);
    let value = push(c, 1, 1);
    (trunks, policy, value, offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: NetConfig,
    trunks: Vec<Vec<LayerSpec>>,
    policy_head: LayerSpec,
    value_head: LayerSpec,
    values: Vec<f64>,
}

/// Gradient (or any other per-parameter quantity) laid out like
/// [`NetworkParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel action distribution, stored pixel-major (`[pixel][action]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMap {
    height: usize,
    width: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl PolicyMap {
    /// Builds a map from explicit probabilities (rows must be normalized).
    pub fn from_probs(height: usize, width: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != height * width * NUM_ACTIONS {
            return Err(Error::Argument(format!(
                "policy length {} does not match {height}x{width}x{NUM_ACTIONS}",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact(NUM_ACTIONS).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Numeric(format!(
                    "policy row {i} is not a distribution (sum {s})"
                )));
            }
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            height,
            width,
            probs,
            log_probs,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let p = 1.0 / NUM_ACTIONS as f64;
        Self {
            height,
            width,
            probs: vec![p; height * width * NUM_ACTIONS],
            log_probs: vec![p.ln(); height * width * NUM_ACTIONS],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (x * self.width + y) * NUM_ACTIONS;
        &self.probs[i..i + NUM_ACTIONS]
    }

    #[inline]
    pub fn pixel_log(&self, x: usize, y: usize) -> &[f64] {
        let i = (x * self.width + y) * NUM_ACTIONS;
        &self.log_probs[i..i + NUM_ACTIONS]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }
}

/// Per-pixel state value.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMap(pub ImageGrid);

impl ValueMap {
    pub fn grid(&self) -> &ImageGrid {
        &self.0
    }
}

/// Intermediate activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    height: usize,
    width: usize,
    /// Replicate-padded input of every trunk layer, per trunk.
    padded_inputs: Vec<Vec<Vec<f64>>>,
    /// Post-rectifier output of every trunk layer, per trunk.
    outputs: Vec<Vec<Vec<f64>>>,
    pub policy: PolicyMap,
    pub value: ValueMap,
}

impl NetworkParams {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (trunks, policy_head, value_head, len) = layout(&config);
        Ok(Self {
            config,
            trunks,
            policy_head,
            value_head,
            values: vec![0.0; len],
        })
    }

    /// Fan-in scaled normal weights (`std = sqrt(2 / fan_in)`) and zero biases
    /// for the trunk; both heads start at zero, giving a uniform policy and a
    /// zero value map.
    pub fn init(config: NetConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        for trunk in &p.trunks {
            for l in trunk {
                let std = (2.0 / (l.in_ch * l.ksize * l.ksize) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                for v in &mut p.values[l.weight_range()] {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&self) -> GradientSet {
        GradientSet::zeros(self.values.len())
    }

    pub(crate) fn from_values(config: NetConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::Params(format!(
                "expected {} parameters, found {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    /// Parameter range of the policy head's output layer (weights then bias).
    pub fn policy_head_range(&self) -> std::ops::Range<usize> {
        self.policy_head.offset..self.policy_head.offset + self.policy_head.len()
    }

    pub fn value_head_range(&self) -> std::ops::Range<usize> {
        self.value_head.offset..self.value_head.offset + self.value_head.len()
    }

    fn check_input(&self, s: &ImageGrid) -> Result<()> {
        if s.len() > MAX_PIXELS {
            return Err(Error::Argument(format!(
                "input of {} pixels exceeds the {MAX_PIXELS}-pixel limit",
                s.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, s: &ImageGrid) -> Result<(PolicyMap, ValueMap)> {
        let c = self.forward_cached(s)?;
        Ok((c.policy, c.value))
    }

    pub fn forward_cached(&self, s: &ImageGrid) -> Result<ForwardCache> {
        self.check_input(s)?;
        let (h, w) = s.shape();
        let hw = h * w;
        let mut padded_inputs = Vec::with_capacity(self.trunks.len());
        let mut outputs = Vec::with_capacity(self.trunks.len());
        let mut layer_index = 0;
        for trunk in &self.trunks {
            let mut pads = Vec::with_capacity(trunk.len());
            let mut outs: Vec<Vec<f64>> = Vec::with_capacity(trunk.len());
            for l in trunk {
                let input = outs.last().map(Vec::as_slice).unwrap_or(s.data());
                let mut pad = Vec::new();
                conv::pad_replicate(input, l.in_ch, h, w, &mut pad);
                let mut out = vec![0.0; l.out_ch * hw];
                conv::conv3x3_forward(
                    &self.values[l.weight_range()],
                    &self.values[l.bias_range()],
                    &pad,
                    l.in_ch,
                    h,
                    w,
                    &mut out,
                );
                for v in &mut out {
                    // keeps NaN visible to the finiteness check
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                check_finite(&out, layer_index)?;
                layer_index += 1;
                pads.push(pad);
                outs.push(out);
            }
            padded_inputs.push(pads);
            outputs.push(outs);
        }

        let (pl, vl) = (&self.policy_head, &self.value_head);
        let mut logits = vec![0.0; NUM_ACTIONS * hw];
        conv::conv1x1_forward(
            &self.values[pl.weight_range()],
            &self.values[pl.bias_range()],
            outputs[0].last().expect("non-empty trunk"),
            pl.in_ch,
            hw,
            &mut logits,
        );
        check_finite(&logits, layer_index)?;
        let mut value = vec![0.0; hw];
        conv::conv1x1_forward(
            &self.values[vl.weight_range()],
            &self.values[vl.bias_range()],
            outputs[self.trunks.len() - 1]
                .last()
                .expect("non-empty trunk"),
            vl.in_ch,
            hw,
            &mut value,
        );
        check_finite(&value, layer_index + 1)?;

        let (probs, log_probs) = softmax_pixels(&logits, hw);
        Ok(ForwardCache {
            height: h,
            width: w,
            padded_inputs,
            outputs,
            policy: PolicyMap {
                height: h,
                width: w,
                probs,
                log_probs,
            },
            value: ValueMap(ImageGrid::new(h, w, value)?),
        })
    }

    /// Gradient of `⟨policy, policy_cot⟩ + ⟨value, value_cot⟩` where
    /// `policy_cot` is pixel-major `[pixel][action]` over probabilities.
    pub fn backward(
        &self,
        s: &ImageGrid,
        policy_cot: &[f64],
        value_cot: &[f64],
    ) -> Result<GradientSet> {
        let cache = self.forward_cached(s)?;
        let hw = cache.height * cache.width;
        if policy_cot.len() != hw * NUM_ACTIONS || value_cot.len() != hw {
            return Err(Error::Dimension {
                expected: (hw * NUM_ACTIONS, hw),
                actual: (policy_cot.len(), value_cot.len()),
            });
        }
        let logit_cot = softmax_backward(cache.policy.probs(), policy_cot);
        let mut grads = self.zero_grad();
        self.backward_logits(&cache, &logit_cot, value_cot, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates into `grads` the gradient of
    /// `⟨logits, logit_cot⟩ + ⟨value, value_cot⟩` for a cached forward pass.
    /// `logit_cot` is pixel-major.
    pub fn backward_logits(
        &self,
        cache: &ForwardCache,
        logit_cot: &[f64],
        value_cot: &[f64],
        grads: &mut GradientSet,
    ) -> Result<()> {
        let (h, w) = (cache.height, cache.width);
        let hw = h * w;
        if logit_cot.len() != hw * NUM_ACTIONS || value_cot.len() != hw {
            return Err(Error::Dimension {
                expected: (hw * NUM_ACTIONS, hw),
                actual: (logit_cot.len(), value_cot.len()),
            });
        }
        if grads.values.len() != self.values.len() {
            return Err(Error::Argument(
                "gradient buffer does not match parameters".into(),
            ));
        }
        // pixel-major -> channel-major
        let mut dlogits = vec![0.0; NUM_ACTIONS * hw];
        for (p, row) in logit_cot.chunks_exact(NUM_ACTIONS).enumerate() {
            for (a, &g) in row.iter().enumerate() {
                dlogits[a * hw + p] = g;
            }
        }

        let c = self.config.trunk_channels;
        let mut dfeat: Vec<Vec<f64>> = vec![vec![0.0; c * hw]; self.trunks.len()];
        let (pl, vl) = (&self.policy_head, &self.value_head);
        {
            let (dw, rest) = grads.values[pl.offset..].split_at_mut(pl.weight_len());
            conv::conv1x1_backward(
                &self.values[pl.weight_range()],
                cache.outputs[0].last().unwrap(),
                &dlogits,
                pl.in_ch,
                hw,
                dw,
                &mut rest[..pl.out_ch],
                &mut dfeat[0],
            );
        }
        {
            let t = self.trunks.len() - 1;
            let (dw, rest) = grads.values[vl.offset..].split_at_mut(vl.weight_len());
            conv::conv1x1_backward(
                &self.values[vl.weight_range()],
                cache.outputs[t].last().unwrap(),
                value_cot,
                vl.in_ch,
                hw,
                dw,
                &mut rest[..vl.out_ch],
                &mut dfeat[t],
            );
        }

        let mut scratch = Vec::new();
        for (t, trunk) in self.trunks.iter().enumerate() {
            let mut dout = std::mem::take(&mut dfeat[t]);
            for (i, l) in trunk.iter().enumerate().rev() {
                // rectifier
                for (d, &o) in dout.iter_mut().zip(&cache.outputs[t][i]) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
                let mut din = if i > 0 {
                    Some(vec![0.0; l.in_ch * hw])
                } else {
                    None
                };
                let (dw, rest) = grads.values[l.offset..].split_at_mut(l.weight_len());
                conv::conv3x3_backward(
                    &self.values[l.weight_range()],
                    &cache.padded_inputs[t][i],
                    &dout,
                    l.in_ch,
                    h,
                    w,
                    dw,
                    &mut rest[..l.out_ch],
                    din.as_deref_mut(),
                    &mut scratch,
                );
                if let Some(d) = din {
                    dout = d;
                }
            }
        }
        Ok(())
    }
}

fn check_finite(v: &[f64], layer: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "non-finite activation at layer {layer}"
        )))
    }
}

/// Stable per-pixel softmax of channel-major logits; returns pixel-major
/// probabilities and log-probabilities.
fn softmax_pixels(logits: &[f64], hw: usize) -> (Vec<f64>, Vec<f64>) {
    let mut probs = vec![0.0; hw * NUM_ACTIONS];
    let mut logp = vec![0.0; hw * NUM_ACTIONS];
    let mut row = [0.0; NUM_ACTIONS];
    for p in 0..hw {
        for (a, r) in row.iter_mut().enumerate() {
            *r = logits[a * hw + p];
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
        let lz = m + z.ln();
        for a in 0..NUM_ACTIONS {
            logp[p * NUM_ACTIONS + a] = row[a] - lz;
            probs[p * NUM_ACTIONS + a] = (row[a] - lz).exp();
        }
    }
    (probs, logp)
}

/// Pulls a probability cotangent back through the softmax:
/// `dl_k = p_k (g_k − Σ_j p_j g_j)`.
pub fn softmax_backward(probs: &[f64], prob_cot: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for ((p, g), o) in probs
        .chunks_exact(NUM_ACTIONS)
        .zip(prob_cot.chunks_exact(NUM_ACTIONS))
        .zip(out.chunks_exact_mut(NUM_ACTIONS))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..NUM_ACTIONS {
            o[k] = p[k] * (g[k] - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny(shared: bool) -> NetConfig {
        NetConfig {
            trunk_layers: 2,
            trunk_channels: 3,
            shared_trunk: shared,
            init_seed: 7,
        }
    }

    fn randomize(p: &mut NetworkParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.values_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }

    fn random_grid(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, |_, _| rng.random())
    }

    #[test]
    fn fresh_net_is_uniform_with_zero_value() {
        let p = NetworkParams::init(NetConfig::default()).unwrap();
        let (pi, v) = p.forward(&random_grid(6, 5, 1)).unwrap();
        for &q in pi.probs() {
            assert!((q - 1.0 / 9.0).abs() < 1e-15);
        }
        assert!(v.0.data().iter().all(|&x| x == 0.0));
        assert_eq!(p, NetworkParams::init(NetConfig::default()).unwrap());
    }

    #[test]
    fn policy_rows_sum_to_one() {
        for shared in [true, false] {
            let mut p = NetworkParams::init(tiny(shared)).unwrap();
            randomize(&mut p, 3);
            let (pi, v) = p.forward(&random_grid(5, 7, 2)).unwrap();
            assert_eq!(pi.shape(), (5, 7));
            assert_eq!(v.0.shape(), (5, 7));
            for row in pi.probs().chunks(NUM_ACTIONS) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_cotangents_give_zero_gradient() {
        let mut p = NetworkParams::init(tiny(true)).unwrap();
        randomize(&mut p, 4);
        let s = random_grid(4, 4, 5);
        let g = p.backward(&s, &vec![0.0; 16 * 9], &vec![0.0; 16]).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        assert!(matches!(
            p.backward(&s, &[0.0; 3], &[0.0; 16]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn translation_equivariance_in_interior() {
        let mut p = NetworkParams::init(tiny(true)).unwrap();
        randomize(&mut p, 8);
        let base = random_grid(12, 13, 9);
        let shifted =
            ImageGrid::from_fn(12, 13, |x, y| base.get(x, if y == 0 { 0 } else { y - 1 }));
        let (pa, va) = p.forward(&base).unwrap();
        let (pb, vb) = p.forward(&shifted).unwrap();
        let r = p.config().trunk_layers;
        for x in r..12 - r {
            for y in r + 1..13 - r {
                assert!((va.0.get(x, y - 1) - vb.0.get(x, y)).abs() < 1e-12);
                for (a, b) in pa.pixel(x, y - 1).iter().zip(pb.pixel(x, y)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for shared in [true, false] {
            let mut p = NetworkParams::init(tiny(shared)).unwrap();
            randomize(&mut p, 11);
            let s = random_grid(5, 6, 12);
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let pc: Vec<f64> = (0..30 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vc: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let objective = |q: &NetworkParams| {
                let (pi, v) = q.forward(&s).unwrap();
                pi.probs().iter().zip(&pc).map(|(a, b)| a * b).sum::<f64>()
                    + v.0.data().iter().zip(&vc).map(|(a, b)| a * b).sum::<f64>()
            };
            let g = p.backward(&s, &pc, &vc).unwrap();
            let h = 1e-5;
            for i in (0..p.len()).step_by(3) {
                let mut plus = p.clone();
                plus.values_mut()[i] += h;
                let mut minus = p.clone();
                minus.values_mut()[i] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let err = (fd - g.values[i]).abs() / fd.abs().max(g.values[i].abs()).max(1e-6);
                assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", g.values[i]);
            }
        }
    }

    #[test]
    fn gradients_are_additive() {
        let mut p = NetworkParams::init(tiny(true)).unwrap();
        randomize(&mut p, 21);
        let s = random_grid(4, 5, 22);
        let a: Vec<f64> = (0..180).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..180).map(|i| (i as f64 * 0.3).cos()).collect();
        let va: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let vb = vec![0.5; 20];
        let ga = p.backward(&s, &a, &va).unwrap();
        let gb = p.backward(&s, &b, &vb).unwrap();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let vab: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x + y).collect();
        let gab = p.backward(&s, &ab, &vab).unwrap();
        for ((x, y), z) in ga.values.iter().zip(&gb.values).zip(&gab.values) {
            assert!((x + y - z).abs() < 1e-10);
        }
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut p = NetworkParams::init(tiny(true)).unwrap();
        randomize(&mut p, 1);
        let mut s = random_grid(3, 3, 1);
        s.set(1, 1, f64::NAN);
        let e = p.forward(&s).unwrap_err().to_string();
        assert!(e.contains("layer 0"), "{e}");
    }
}
