//! Batched advantage actor-critic training loop.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::env::{run_episode, BoundaryMode, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::image::{Dihedral, ImageGrid, PixelCoord};
use crate::net::{GradientSet, NetworkParams};
use crate::noise::{noisy_observation, NoiseSpec};
use crate::seeds;
use crate::train::adam::{adam_step, clip_global_norm, lr_schedule, OptimizerState};
use crate::train::checkpoint::Checkpoint;
use crate::train::loss::{policy_cotangent, value_cotangent};
use crate::train::returns::{bootstrap_targets, returns_from_rewards, RewardConvKernel};
use crate::train::sample::sample_actions_with;

/// What the value head regresses onto and the advantage is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvantageMode {
    /// One-step target `r + γ ω ⋆ V(s')`.
    #[default]
    Bootstrap,
    /// Full convolutional return `G`.
    Return,
}

/// Which loss terms the reward kernel is trained on in stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OmegaGrad {
    /// Value regression only.
    #[default]
    Value,
    /// Value regression and the policy objective (through the advantage).
    Both,
}

macro_rules! str_enum {
    ($t:ty, $what:literal, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Argument(format!(concat!("unknown ", $what, " `{}`"), s))),
                }
            }
        }
    };
}

str_enum!(AdvantageMode, "advantage mode", AdvantageMode::Bootstrap => "bootstrap", AdvantageMode::Return => "return");
str_enum!(OmegaGrad, "kernel gradient mode", OmegaGrad::Value => "value", OmegaGrad::Both => "both");

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub t_max: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr0: f64,
    pub workers: usize,
    pub entropy_beta: f64,
    pub stage: u8,
    pub seed: u64,
    pub noise: NoiseSpec,
    /// Random dihedral transform per sampled patch.
    pub augment: bool,
    /// Rewards are multiplied by this before returns and losses. Squared
    /// errors of [0,1] images are tiny; 255 puts them on the 8-bit scale.
    pub reward_scale: f64,
    pub value_coef: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    pub advantage: AdvantageMode,
    /// Project ω to unit sum after every stage-2 update.
    pub omega_normalize: bool,
    pub omega_grad: OmegaGrad,
    /// Hogwild-style workers updating shared parameters. Not reproducible.
    pub asynchronous: bool,
    /// Write real per-episode durations into the log. Off by default so
    /// that logs of identical runs compare equal.
    pub record_wall_time: bool,
    /// Checkpoint period in episodes; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub boundary: BoundaryMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 60_000,
            t_max: 5,
            gamma: 0.95,
            batch_size: 64,
            patch_size: 70,
            lr0: 1e-3,
            workers: 1,
            entropy_beta: 0.01,
            stage: 1,
            seed: 0,
            noise: NoiseSpec::gaussian(25.0),
            augment: false,
            reward_scale: 255.0,
            value_coef: 0.5,
            grad_clip: 40.0,
            advantage: AdvantageMode::Bootstrap,
            omega_normalize: false,
            omega_grad: OmegaGrad::Value,
            asynchronous: false,
            record_wall_time: false,
            checkpoint_every: 0,
            boundary: BoundaryMode::Replicate,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Argument(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.t_max == 0 {
            return fail("t_max must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 || self.workers == 0 {
            return fail("batch_size and workers must be positive".into());
        }
        if self.patch_size < 2 {
            return fail(format!(
                "patch_size must be at least 2, got {}",
                self.patch_size
            ));
        }
        if !(self.entropy_beta >= 0.0 && self.entropy_beta.is_finite()) {
            return fail(format!(
                "entropy_beta must be nonnegative, got {}",
                self.entropy_beta
            ));
        }
        if !(1..=2).contains(&self.stage) {
            return fail(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return fail(format!(
                "reward_scale must be positive, got {}",
                self.reward_scale
            ));
        }
        if !(self.value_coef >= 0.0 && self.grad_clip >= 0.0) {
            return fail("value_coef and grad_clip must be nonnegative".into());
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    /// Per-pixel squared-error decrease over the episode, averaged over the batch.
    pub mean_reward: f64,
    /// Mean `G(0)` in scaled reward units.
    pub mean_return: f64,
    pub value_loss: f64,
    pub policy_obj: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub const LOG_HEADER: &str = "episode,mean_reward,mean_return,value_loss,policy_obj,lr,wall_ms";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.episode,
                r.mean_reward,
                r.mean_return,
                r.value_loss,
                r.policy_obj,
                r.lr,
                r.wall_ms
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean of `mean_reward` over the first and last `frac` of the rows.
    pub fn reward_trend(&self, frac: f64) -> Option<(f64, f64)> {
        let n = ((self.rows.len() as f64 * frac).floor() as usize).max(1);
        if self.rows.len() < 2 * n {
            return None;
        }
        let mean = |rs: &[LogRow]| rs.iter().map(|r| r.mean_reward).sum::<f64>() / rs.len() as f64;
        Some((
            mean(&self.rows[..n]),
            mean(&self.rows[self.rows.len() - n..]),
        ))
    }
}

/// A clean patch and its noisy observation.
pub fn sample_patch(
    corpus: &Corpus,
    patch_size: usize,
    augment: bool,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> Result<(ImageGrid, ImageGrid)> {
    if corpus.is_empty() {
        return Err(Error::Corpus("cannot sample from an empty corpus".into()));
    }
    let img = &corpus.images[rng.random_range(0..corpus.len())];
    let (h, w) = img.shape();
    let (ph, pw) = (patch_size.min(h), patch_size.min(w));
    let x0 = rng.random_range(0..=h - ph);
    let y0 = rng.random_range(0..=w - pw);
    let mut clean = img.crop(x0, y0, ph, pw)?;
    if augment {
        clean = clean.augment(Dihedral::new(rng.random_range(0..8))?);
    }
    let noisy = noisy_observation(&clean, noise, rng.random())?;
    Ok((clean, noisy))
}

/// Adjoint of `ω ⋆ ·` under replicate padding.
fn omega_adjoint(omega: &RewardConvKernel, c: &ImageGrid) -> ImageGrid {
    let mut out = ImageGrid::filled(c.height(), c.width(), 0.0);
    for x in 0..c.height() {
        for y in 0..c.width() {
            let v = c.get(x, y);
            if v == 0.0 {
                continue;
            }
            let p = PixelCoord::new(x as isize, y as isize);
            for (o, &w) in crate::image::NeighborOffset::window().zip(&omega.weights) {
                let (cx, cy) = c.clamp_coord(p.offset(o));
                let cur = out.get(cx, cy);
                out.set(cx, cy, cur + w * v);
            }
        }
    }
    out
}

struct ElementResult {
    grads: GradientSet,
    omega_grad: [f64; 9],
    reward: f64,
    ret: f64,
    value_loss: f64,
    policy_obj: f64,
}

fn run_element(
    params: &NetworkParams,
    omega: &RewardConvKernel,
    cfg: &TrainConfig,
    corpus: &Corpus,
    seed: u64,
) -> Result<ElementResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (clean, noisy) = sample_patch(corpus, cfg.patch_size, cfg.augment, &cfg.noise, &mut rng)?;
    let mut caches = Vec::with_capacity(cfg.t_max);
    let trace = run_episode(&noisy, Some(&clean), cfg.t_max, cfg.boundary, |_, u| {
        let cache = params.forward_cached(u)?;
        let a = sample_actions_with(&cache.policy, &mut rng)?;
        caches.push(cache);
        Ok(a)
    })?;

    let raw = trace.rewards()?;
    let reward: f64 = raw.iter().map(|r| r.grid().mean()).sum();
    let rewards: Vec<ImageGrid> = raw
        .iter()
        .map(|r| r.grid().map(|v| v * cfg.reward_scale))
        .collect();
    let reward_refs: Vec<&ImageGrid> = rewards.iter().collect();
    let values: Vec<&ImageGrid> = caches.iter().map(|c| c.value.grid()).collect();
    let returns = returns_from_rewards(&reward_refs, cfg.gamma, omega)?;
    let targets: Vec<ImageGrid> = match cfg.advantage {
        AdvantageMode::Bootstrap => bootstrap_targets(&reward_refs, &values, cfg.gamma, omega)?,
        AdvantageMode::Return => returns.iter().map(|g| g.0.clone()).collect(),
    };

    let norm = 1.0 / (cfg.batch_size * clean.len()) as f64;
    let mut grads = params.zero_grad();
    let mut value_loss = 0.0;
    let mut policy_obj = 0.0;
    // cotangents of the total loss with respect to each target map
    let mut target_cots = Vec::with_capacity(cfg.t_max);
    for (t, cache) in caches.iter().enumerate() {
        let y = &targets[t];
        let (vl, vcot) = value_cotangent(values[t], y, cfg.value_coef * norm)?;
        let adv: Vec<f64> = y
            .data()
            .iter()
            .zip(values[t].data())
            .map(|(a, b)| a - b)
            .collect();
        let adv = ImageGrid::new(y.height(), y.width(), adv)?;
        let actions = &trace.steps[t].actions;
        let (obj, lcot) = policy_cotangent(&cache.policy, actions, &adv, cfg.entropy_beta, norm)?;
        value_loss += vl * norm;
        policy_obj += obj * norm;
        params.backward_logits(cache, &lcot, &vcot, &mut grads)?;

        if omega.learnable {
            let mut c: Vec<f64> = vcot.iter().map(|v| -v).collect();
            if cfg.omega_grad == OmegaGrad::Both {
                for (px, ci) in c.iter_mut().enumerate() {
                    let a = actions.indices()[px] as usize;
                    *ci -= norm * cache.policy.log_probs()[px * NUM_ACTIONS + a];
                }
            }
            target_cots.push(ImageGrid::new(y.height(), y.width(), c)?);
        }
    }

    let mut omega_grad = [0.0; 9];
    if omega.learnable {
        let mut acc = |cot: &ImageGrid, g: &ImageGrid| {
            let wg = RewardConvKernel::weight_gradient(cot, g);
            for (o, d) in omega_grad.iter_mut().zip(wg) {
                *o += cfg.gamma * d;
            }
        };
        match cfg.advantage {
            AdvantageMode::Bootstrap => {
                for t in 0..cfg.t_max - 1 {
                    acc(&target_cots[t], values[t + 1]);
                }
            }
            AdvantageMode::Return => {
                // G(t) = r(t) + γ ω ⋆ G(t+1): push cotangents down the recursion
                let mut carry = target_cots[0].clone();
                for t in 0..cfg.t_max - 1 {
                    acc(&carry, &returns[t + 1].0);
                    let back = omega_adjoint(omega, &carry);
                    carry = target_cots[t + 1].clone();
                    for (c, b) in carry.data_mut().iter_mut().zip(back.data()) {
                        *c += cfg.gamma * b;
                    }
                }
            }
        }
    }

    Ok(ElementResult {
        grads,
        omega_grad,
        reward,
        ret: returns[0].0.mean(),
        value_loss,
        policy_obj,
    })
}

struct BatchResult {
    grads: GradientSet,
    omega_grad: [f64; 9],
    reward: f64,
    ret: f64,
    value_loss: f64,
    policy_obj: f64,
}

fn run_batch(
    params: &NetworkParams,
    omega: &RewardConvKernel,
    cfg: &TrainConfig,
    corpus: &Corpus,
    episode_key: u64,
    parallel: bool,
) -> Result<BatchResult> {
    let seed_of = |b: usize| seeds::derive(&[cfg.seed, cfg.stage as u64, episode_key, b as u64]);
    let run = |b: usize| run_element(params, omega, cfg, corpus, seed_of(b));
    let elems: Vec<Result<ElementResult>> = if parallel {
        (0..cfg.batch_size).into_par_iter().map(run).collect()
    } else {
        (0..cfg.batch_size).map(run).collect()
    };
    // summed in index order so the result does not depend on scheduling
    let mut out = BatchResult {
        grads: params.zero_grad(),
        omega_grad: [0.0; 9],
        reward: 0.0,
        ret: 0.0,
        value_loss: 0.0,
        policy_obj: 0.0,
    };
    let inv = 1.0 / cfg.batch_size as f64;
    for e in elems {
        let e = e?;
        out.grads.add_assign(&e.grads);
        for (o, d) in out.omega_grad.iter_mut().zip(e.omega_grad) {
            *o += d;
        }
        out.reward += e.reward * inv;
        out.ret += e.ret * inv;
        out.value_loss += e.value_loss;
        out.policy_obj += e.policy_obj;
    }
    Ok(out)
}

/// Updates the network, and ω when learnable, from one batch.
fn apply_update(
    batch: &mut BatchResult,
    cfg: &TrainConfig,
    state: &mut ModelState,
    lr: f64,
    episode: usize,
) -> Result<()> {
    let finite = batch.value_loss.is_finite()
        && batch.policy_obj.is_finite()
        && batch.grads.is_finite()
        && batch.omega_grad.iter().all(|g| g.is_finite());
    if !finite {
        return Err(Error::Numeric(format!(
            "training diverged at episode {episode}: value_loss={} policy_obj={} grad_norm={}",
            batch.value_loss,
            batch.policy_obj,
            batch.grads.norm()
        )));
    }
    let learnable = state.omega.learnable;
    {
        let mut groups: Vec<&mut [f64]> = vec![&mut batch.grads.values];
        if learnable {
            groups.push(&mut batch.omega_grad);
        }
        clip_global_norm(&mut groups, cfg.grad_clip);
    }
    adam_step(
        state.params.values_mut(),
        &batch.grads.values,
        &mut state.opt,
        lr,
    )?;
    if learnable {
        adam_step(
            &mut state.omega.weights,
            &batch.omega_grad,
            &mut state.omega_opt,
            lr,
        )?;
        if cfg.omega_normalize {
            state.omega.normalize();
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ModelState {
    params: NetworkParams,
    opt: OptimizerState,
    omega: RewardConvKernel,
    omega_opt: OptimizerState,
    episodes_done: u64,
}

/// Training session state: network, optimizers, reward kernel and log.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    state: ModelState,
    log: TrainLog,
    diagnostics: Option<String>,
}

impl Trainer {
    /// Fresh stage-1 training from `params`.
    pub fn new(cfg: TrainConfig, params: NetworkParams) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage != 1 {
            return Err(Error::Argument(
                "stage 2 must resume from a stage-1 checkpoint".into(),
            ));
        }
        let n = params.len();
        Ok(Self {
            cfg,
            state: ModelState {
                params,
                opt: OptimizerState::new(n),
                omega: RewardConvKernel::identity(),
                omega_opt: OptimizerState::new(9),
                episodes_done: 0,
            },
            log: TrainLog::default(),
            diagnostics: None,
        })
    }

    /// Continues from a checkpoint. Entering stage 2 makes ω learnable with
    /// fresh optimizer moments; the learning-rate schedule restarts.
    pub fn resume(cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage < ck.stage {
            return Err(Error::Argument(format!(
                "cannot run stage {} from a stage-{} checkpoint",
                cfg.stage, ck.stage
            )));
        }
        let mut omega = ck.omega;
        let mut omega_opt = ck.omega_opt;
        if cfg.stage == 2 && ck.stage == 1 {
            omega.learnable = true;
            omega_opt = OptimizerState::new(9);
        }
        Ok(Self {
            cfg,
            state: ModelState {
                params: ck.params,
                opt: ck.opt,
                omega,
                omega_opt,
                episodes_done: ck.episodes_done,
            },
            log: TrainLog::default(),
            diagnostics: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &NetworkParams {
        &self.state.params
    }

    pub fn omega(&self) -> &RewardConvKernel {
        &self.state.omega
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Description of the state at the point training failed, if it did.
    pub fn diagnostics(&self) -> Option<&str> {
        self.diagnostics.as_deref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.state.params.clone(),
            stage: self.cfg.stage,
            episodes_done: self.state.episodes_done,
            omega: self.state.omega,
            opt: self.state.opt.clone(),
            omega_opt: self.state.omega_opt.clone(),
        }
    }

    pub fn into_parts(self) -> (NetworkParams, TrainLog) {
        (self.state.params, self.log)
    }

    /// Runs `cfg.episodes` episodes. With `checkpoint_path`, a checkpoint is
    /// written every `checkpoint_every` episodes and at the end.
    pub fn run(&mut self, corpus: &Corpus, checkpoint_path: Option<&Path>) -> Result<()> {
        if corpus.is_empty() {
            return Err(Error::Corpus("training corpus is empty".into()));
        }
        let res = if self.cfg.asynchronous && self.cfg.workers > 1 {
            self.run_async(corpus, checkpoint_path)
        } else {
            self.run_sync(corpus, checkpoint_path)
        };
        if let Err(e) = &res {
            self.diagnostics = Some(self.describe(e));
        }
        res?;
        if let Some(p) = checkpoint_path {
            self.checkpoint().save(p)?;
        }
        Ok(())
    }

    fn describe(&self, e: &Error) -> String {
        let v = self.state.params.values();
        let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let non_finite = v.iter().filter(|x| !x.is_finite()).count();
        let mut s = format!("error: {e}\nepisodes_done: {}\n", self.state.episodes_done);
        s.push_str(&format!(
            "params: {} values, max |w| {max_abs}, {non_finite} non-finite\n",
            v.len()
        ));
        s.push_str(&format!("adam_step: {}\n", self.state.opt.step));
        s.push_str(&format!("omega: {:?}\n", self.state.omega.weights));
        if let Some(r) = self.log.rows.last() {
            s.push_str(&format!(
                "last_row: episode={} mean_reward={} value_loss={} policy_obj={} lr={}\n",
                r.episode, r.mean_reward, r.value_loss, r.policy_obj, r.lr
            ));
        }
        s
    }

    fn maybe_checkpoint(&self, done: usize, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p)
                if self.cfg.checkpoint_every > 0
                    && done.is_multiple_of(self.cfg.checkpoint_every) =>
            {
                self.checkpoint().save(p)
            }
            _ => Ok(()),
        }
    }

    fn run_sync(&mut self, corpus: &Corpus, checkpoint_path: Option<&Path>) -> Result<()> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        let parallel = self.cfg.workers > 1;
        for i in 0..self.cfg.episodes {
            let start = Instant::now();
            let key = self.state.episodes_done;
            let mut batch = pool.install(|| {
                run_batch(
                    &self.state.params,
                    &self.state.omega,
                    &self.cfg,
                    corpus,
                    key,
                    parallel,
                )
            })?;
            let lr = lr_schedule(i, self.cfg.episodes, self.cfg.lr0);
            apply_update(&mut batch, &self.cfg, &mut self.state, lr, i)?;
            self.state.episodes_done += 1;
            let wall_ms = if self.cfg.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            self.log.rows.push(LogRow {
                episode: i,
                mean_reward: batch.reward,
                mean_return: batch.ret,
                value_loss: batch.value_loss,
                policy_obj: batch.policy_obj,
                lr,
                wall_ms,
            });
            if i % 100 == 0 {
                log::debug!(
                    "episode {i}: reward {:.3e} value_loss {:.4} lr {lr:.2e}",
                    batch.reward,
                    batch.value_loss
                );
            }
            self.maybe_checkpoint(i + 1, checkpoint_path)?;
        }
        Ok(())
    }

    fn run_async(&mut self, corpus: &Corpus, checkpoint_path: Option<&Path>) -> Result<()> {
        struct Shared {
            state: ModelState,
            rows: Vec<LogRow>,
            error: Option<Error>,
            applied: usize,
        }
        let base = self.state.episodes_done;
        let shared = Mutex::new(Shared {
            state: self.state.clone(),
            rows: Vec::with_capacity(self.cfg.episodes),
            error: None,
            applied: 0,
        });
        let next = AtomicUsize::new(0);
        let cfg = &self.cfg;
        std::thread::scope(|s| {
            for _ in 0..cfg.workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= cfg.episodes {
                        break;
                    }
                    let start = Instant::now();
                    let (params, omega) = {
                        let g = shared.lock().unwrap();
                        if g.error.is_some() {
                            break;
                        }
                        (g.state.params.clone(), g.state.omega)
                    };
                    let res = run_batch(&params, &omega, cfg, corpus, base + i as u64, false);
                    let mut g = shared.lock().unwrap();
                    let lr = lr_schedule(i, cfg.episodes, cfg.lr0);
                    let res = res.and_then(|mut b| {
                        apply_update(&mut b, cfg, &mut g.state, lr, i)?;
                        Ok(b)
                    });
                    match res {
                        Ok(b) => {
                            g.state.episodes_done += 1;
                            g.applied += 1;
                            g.rows.push(LogRow {
                                episode: i,
                                mean_reward: b.reward,
                                mean_return: b.ret,
                                value_loss: b.value_loss,
                                policy_obj: b.policy_obj,
                                lr,
                                wall_ms: if cfg.record_wall_time {
                                    start.elapsed().as_millis() as u64
                                } else {
                                    0
                                },
                            });
                            if let Some(p) = checkpoint_path {
                                if cfg.checkpoint_every > 0
                                    && g.applied.is_multiple_of(cfg.checkpoint_every)
                                {
                                    let ck = Checkpoint {
                                        params: g.state.params.clone(),
                                        stage: cfg.stage,
                                        episodes_done: g.state.episodes_done,
                                        omega: g.state.omega,
                                        opt: g.state.opt.clone(),
                                        omega_opt: g.state.omega_opt.clone(),
                                    };
                                    if let Err(e) = ck.save(p) {
                                        g.error = Some(e);
                                    }
                                }
                            }
                        }
                        Err(e) => {
                            g.error.get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });
        let mut sh = shared.into_inner().unwrap();
        sh.rows.sort_by_key(|r| r.episode);
        self.state = sh.state;
        self.log.rows.extend(sh.rows);
        match sh.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Stage-1 training from `net`; returns the trained parameters and the log.
pub fn train(
    corpus: &Corpus,
    cfg: &TrainConfig,
    net: NetworkParams,
) -> Result<(NetworkParams, TrainLog)> {
    let mut t = Trainer::new(cfg.clone(), net)?;
    t.run(corpus, None)?;
    Ok(t.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_corpus, SyntheticStyle};
    use crate::net::NetConfig;
    use crate::train::loss::{policy_loss_grad, value_loss_grad};
    use crate::train::returns::AdvantageMap;

    fn tiny_net() -> NetworkParams {
        NetworkParams::init(NetConfig {
            trunk_layers: 2,
            trunk_channels: 4,
            shared_trunk: true,
            init_seed: 1,
        })
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            episodes: 6,
            t_max: 3,
            batch_size: 3,
            patch_size: 8,
            record_wall_time: false,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn corpus() -> Corpus {
        synthetic_corpus(3, 12, 12, 4, SyntheticStyle::default())
    }

    #[test]
    fn zero_episodes_leave_params_unchanged() {
        let net = tiny_net();
        let cfg = TrainConfig {
            episodes: 0,
            ..tiny_cfg()
        };
        let (p, log) = train(&corpus(), &cfg, net.clone()).unwrap();
        assert_eq!(p, net);
        assert!(log.rows.is_empty());
        assert_eq!(log.to_csv(), format!("{LOG_HEADER}\n"));
    }

    #[test]
    fn training_is_reproducible_and_thread_count_independent() {
        let c = corpus();
        let (p1, l1) = train(&c, &tiny_cfg(), tiny_net()).unwrap();
        let (p2, l2) = train(&c, &tiny_cfg(), tiny_net()).unwrap();
        assert_eq!(l1.to_csv(), l2.to_csv());
        assert_eq!(p1.values(), p2.values());
        let (p3, l3) = train(
            &c,
            &TrainConfig {
                workers: 3,
                ..tiny_cfg()
            },
            tiny_net(),
        )
        .unwrap();
        assert_eq!(l1.to_csv(), l3.to_csv());
        assert_eq!(p1.values(), p3.values());
        assert_ne!(p1.values(), tiny_net().values());
        assert_eq!(l1.rows.len(), 6);
        assert_eq!(l1.rows[0].lr, 1e-3);
    }

    #[test]
    fn element_gradient_matches_public_losses() {
        // the fused per-element pass equals the standalone loss gradients
        let cfg = TrainConfig {
            batch_size: 1,
            entropy_beta: 0.05,
            ..tiny_cfg()
        };
        let mut net = tiny_net();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for v in net.values_mut() {
            *v += r.random_range(-0.2..0.2);
        }
        let c = corpus();
        let seed = 99;
        let e = run_element(&net, &RewardConvKernel::identity(), &cfg, &c, seed).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (clean, noisy) = sample_patch(&c, cfg.patch_size, false, &cfg.noise, &mut rng).unwrap();
        let trace = run_episode(&noisy, Some(&clean), cfg.t_max, cfg.boundary, |_, u| {
            let (pi, _) = net.forward(u)?;
            sample_actions_with(&pi, &mut rng)
        })
        .unwrap();
        let rewards: Vec<ImageGrid> = trace
            .rewards()
            .unwrap()
            .iter()
            .map(|r| r.grid().map(|v| v * cfg.reward_scale))
            .collect();
        let vals: Vec<ImageGrid> = trace
            .steps
            .iter()
            .map(|s| net.forward(&s.state).unwrap().1 .0)
            .collect();
        let targets = bootstrap_targets(
            &rewards.iter().collect::<Vec<_>>(),
            &vals.iter().collect::<Vec<_>>(),
            cfg.gamma,
            &RewardConvKernel::identity(),
        )
        .unwrap();
        let advs: Vec<AdvantageMap> = targets
            .iter()
            .zip(&vals)
            .map(|(y, v)| crate::train::returns::advantage(y, v).unwrap())
            .collect();
        let (vl, gv) = value_loss_grad(&net, &trace, &targets).unwrap();
        let (po, gp) = policy_loss_grad(&net, &trace, &advs, cfg.entropy_beta).unwrap();
        let norm = 1.0 / clean.len() as f64;
        assert!((e.value_loss - vl * norm).abs() < 1e-9 * (1.0 + vl.abs()));
        assert!((e.policy_obj - po * norm).abs() < 1e-9 * (1.0 + po.abs()));
        for ((a, b), c) in e.grads.values.iter().zip(&gv.values).zip(&gp.values) {
            let want = norm * (cfg.value_coef * b + c);
            assert!(
                (a - want).abs() < 1e-9 * (1.0 + want.abs()),
                "{a} vs {want}"
            );
        }
    }

    fn omega_objective(
        cfg: &TrainConfig,
        omega: &RewardConvKernel,
        net: &NetworkParams,
        seed: u64,
    ) -> f64 {
        let e = run_element(net, omega, cfg, &corpus(), seed).unwrap();
        // value_coef is 1 in the caller, entropy does not depend on ω
        match cfg.omega_grad {
            OmegaGrad::Value => e.value_loss,
            OmegaGrad::Both => e.value_loss - e.policy_obj,
        }
    }

    #[test]
    fn omega_gradient_matches_finite_differences() {
        let mut net = tiny_net();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for v in net.values_mut() {
            *v += r.random_range(-0.3..0.3);
        }
        for (mode, grad) in [
            (AdvantageMode::Bootstrap, OmegaGrad::Value),
            (AdvantageMode::Bootstrap, OmegaGrad::Both),
            (AdvantageMode::Return, OmegaGrad::Value),
            (AdvantageMode::Return, OmegaGrad::Both),
        ] {
            let cfg = TrainConfig {
                batch_size: 1,
                value_coef: 1.0,
                entropy_beta: 0.0,
                advantage: mode,
                omega_grad: grad,
                ..tiny_cfg()
            };
            let mut w = [0.0; 9];
            for v in w.iter_mut() {
                *v = r.random_range(-0.2..0.4);
            }
            let omega = RewardConvKernel::new(w, true).unwrap();
            let e = run_element(&net, &omega, &cfg, &corpus(), 7).unwrap();
            // value loss enters the total with value_coef; the reported value_loss is unweighted
            for k in 0..9 {
                let h = 1e-6;
                let mut wp = omega;
                wp.weights[k] += h;
                let mut wm = omega;
                wm.weights[k] -= h;
                let fd = (omega_objective(&cfg, &wp, &net, 7)
                    - omega_objective(&cfg, &wm, &net, 7))
                    / (2.0 * h);
                let g = e.omega_grad[k];
                assert!(
                    (fd - g).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "{mode:?}/{grad:?} k={k}: fd {fd} vs {g}"
                );
            }
        }
    }

    #[test]
    fn omega_adjoint_is_adjoint() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut w = [0.0; 9];
        w.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        let om = RewardConvKernel::new(w, false).unwrap();
        let a = ImageGrid::from_fn(5, 6, |_, _| r.random_range(-1.0..1.0));
        let b = ImageGrid::from_fn(5, 6, |_, _| r.random_range(-1.0..1.0));
        let dot = |p: &ImageGrid, q: &ImageGrid| {
            p.data()
                .iter()
                .zip(q.data())
                .map(|(x, y)| x * y)
                .sum::<f64>()
        };
        let lhs = dot(&om.apply(&a), &b);
        let rhs = dot(&a, &omega_adjoint(&om, &b));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_resume_enters_stage_two() {
        let c = corpus();
        let mut t = Trainer::new(tiny_cfg(), tiny_net()).unwrap();
        t.run(&c, None).unwrap();
        let ck = t.checkpoint();
        assert_eq!(ck.episodes_done, 6);
        assert!(!ck.omega.learnable);
        let cfg2 = TrainConfig {
            stage: 2,
            episodes: 3,
            ..tiny_cfg()
        };
        assert!(Trainer::new(cfg2.clone(), tiny_net()).is_err());
        let mut t2 = Trainer::resume(cfg2, ck).unwrap();
        assert!(t2.omega().learnable);
        t2.run(&c, None).unwrap();
        assert_ne!(t2.omega().weights, RewardConvKernel::identity().weights);
        assert_eq!(t2.checkpoint().episodes_done, 9);
        assert_eq!(t2.log().rows[0].lr, 1e-3);
    }

    #[test]
    fn async_mode_runs_all_episodes() {
        let cfg = TrainConfig {
            asynchronous: true,
            workers: 2,
            ..tiny_cfg()
        };
        let mut t = Trainer::new(cfg, tiny_net()).unwrap();
        t.run(&corpus(), None).unwrap();
        let eps: Vec<usize> = t.log().rows.iter().map(|r| r.episode).collect();
        assert_eq!(eps, (0..6).collect::<Vec<_>>());
        assert_eq!(t.checkpoint().opt.step, 6);
    }

    #[test]
    fn divergence_is_reported_with_diagnostics() {
        let mut net = tiny_net();
        net.values_mut()[0] = f64::NAN;
        let mut t = Trainer::new(tiny_cfg(), net).unwrap();
        assert!(t.run(&corpus(), None).is_err());
        let d = t.diagnostics().unwrap();
        assert!(d.contains("non-finite"), "{d}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            gamma: 1.0,
            ..tiny_cfg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            t_max: 0,
            ..tiny_cfg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr0: 0.0,
            ..tiny_cfg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            stage: 3,
            ..tiny_cfg()
        }
        .validate()
        .is_err());
        assert!(tiny_cfg().validate().is_ok());
        assert_eq!(
            "return".parse::<AdvantageMode>().unwrap(),
            AdvantageMode::Return
        );
        assert!("x".parse::<OmegaGrad>().is_err());
    }
}
