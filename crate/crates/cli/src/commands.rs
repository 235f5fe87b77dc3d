use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;

use rldiff::classic::{pm_denoise, DiffusionConfig, Diffusivity};
use rldiff::corpus::{synthetic_corpus, Corpus, CorpusManifest, Split, SyntheticStyle};
use rldiff::env::{composite_kernels, BoundaryMode};
use rldiff::image::{psnr, PixelCoord};
use rldiff::infer::{denoise_with, eval_means, evaluate_corpus, render_action_map, render_kernel};
use rldiff::net::{load_params, NetConfig, NetworkParams};
use rldiff::noise::{noisy_observation, NoiseKind, NoiseSpec};
use rldiff::pnm::{load_image, save_image, save_ppm};
use rldiff::train::{AdvantageMode, Checkpoint, OmegaGrad, TrainConfig, Trainer};

use crate::config::Resolver;
use crate::{
    BaselinePmArgs, DenoiseArgs, DiffusionFlags, EvaluateArgs, GenCorpusArgs, NoiseArgs,
    NoiseFlags, TrainArgs,
};

/// Files written by a command; removed again unless the command succeeds.
struct Outputs {
    paths: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn new() -> Self {
        Self {
            paths: Vec::new(),
            keep: false,
        }
    }

    fn track(&mut self, p: impl Into<PathBuf>) -> PathBuf {
        let p = p.into();
        self.paths.push(p.clone());
        p
    }

    fn commit(mut self) {
        self.keep = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.paths {
                if p.exists() {
                    let _ = fs::remove_file(p);
                }
            }
        }
    }
}

fn echo(command: &str, settings: &[(String, String)]) {
    info!("{command}: resolved configuration");
    for (k, v) in settings {
        info!("  {k} = {v}");
    }
}

fn path(r: &mut Resolver, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
    let s = flag.map(|p| p.to_string_lossy().into_owned());
    Ok(PathBuf::from(r.require::<String>(key, s)?))
}

fn opt_path(r: &mut Resolver, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
    let s = flag.map(|p| p.to_string_lossy().into_owned());
    Ok(r.get_opt::<String>(key, s)?.map(PathBuf::from))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| anyhow!("{e}"))
}

fn resolve_noise(r: &mut Resolver, f: NoiseFlags) -> Result<NoiseSpec> {
    let kind: NoiseKind = parse(&r.get("noise", f.noise, "gaussian".to_string())?)?;
    r.accept(&["sigma", "density", "peak"]);
    let level = match kind {
        NoiseKind::Gaussian => r.get("sigma", f.sigma, 25.0)?,
        NoiseKind::SaltPepper => r.get("density", f.density, 0.1)?,
        NoiseKind::Poisson => r.get("peak", f.peak, 30.0)?,
    };
    let spec = NoiseSpec { kind, level };
    spec.validate()?;
    Ok(spec)
}

fn resolve_diffusion(r: &mut Resolver, f: DiffusionFlags) -> Result<DiffusionConfig> {
    let d = DiffusionConfig::default();
    let kappa = r.get("kappa", f.kappa, d.kappa)?;
    let iterations = r.get("iterations", f.iterations, d.iterations)?;
    let diffusivity = match r
        .get("diffusivity", f.diffusivity, "pm".to_string())?
        .as_str()
    {
        "pm" => Diffusivity::PeronaMalik {
            contrast: r.get("contrast", f.contrast, 1.0)?,
        },
        "linear" => {
            r.accept(&["contrast"]);
            Diffusivity::Linear
        }
        other => bail!("unknown diffusivity `{other}` (expected pm or linear)"),
    };
    let scheme = parse(&r.get("scheme", f.scheme, "balanced".to_string())?)?;
    let cfg = DiffusionConfig {
        kappa,
        iterations,
        diffusivity,
        scheme,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(dir: &Path, split: Split, augment: bool) -> Result<Corpus> {
    let m = CorpusManifest::scan(dir, split, augment)?;
    info!(
        "{} corpus: {} images from {}",
        split,
        m.paths.len(),
        dir.display()
    );
    Ok(Corpus::load(&m)?)
}

pub fn train(a: TrainArgs, threads: Option<usize>) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let corpus_dir = path(&mut r, "corpus", a.corpus)?;
    let out = PathBuf::from(r.get(
        "out",
        a.out.map(|p| p.to_string_lossy().into_owned()),
        "model.ckpt".into(),
    )?);
    let default_log = out.with_extension("csv").to_string_lossy().into_owned();
    let log_path = PathBuf::from(r.get(
        "log",
        a.log.map(|p| p.to_string_lossy().into_owned()),
        default_log,
    )?);
    let resume = opt_path(&mut r, "resume", a.resume)?;
    let d = TrainConfig::default();
    let noise = resolve_noise(&mut r, a.noise)?;
    let mut cfg = TrainConfig {
        episodes: r.get("episodes", a.episodes, d.episodes)?,
        t_max: r.get("steps", a.steps, d.t_max)?,
        gamma: r.get("gamma", a.gamma, d.gamma)?,
        batch_size: r.get("batch_size", a.batch_size, d.batch_size)?,
        patch_size: r.get("patch_size", a.patch_size, d.patch_size)?,
        lr0: r.get("lr", a.lr, d.lr0)?,
        workers: r.get("workers", a.workers, d.workers)?,
        entropy_beta: r.get("entropy_beta", a.entropy_beta, d.entropy_beta)?,
        stage: r.get("stage", a.stage, d.stage)?,
        seed: r.get("seed", a.seed, d.seed)?,
        noise,
        augment: r.switch("augment", a.augment)?,
        reward_scale: r.get("reward_scale", a.reward_scale, d.reward_scale)?,
        value_coef: r.get("value_coef", a.value_coef, d.value_coef)?,
        grad_clip: r.get("grad_clip", a.grad_clip, d.grad_clip)?,
        advantage: parse::<AdvantageMode>(&r.get(
            "advantage",
            a.advantage,
            d.advantage.to_string(),
        )?)?,
        omega_normalize: r.switch("omega_normalize", a.omega_normalize)?,
        omega_grad: parse::<OmegaGrad>(&r.get(
            "omega_grad",
            a.omega_grad,
            d.omega_grad.to_string(),
        )?)?,
        asynchronous: r.switch("async", a.asynchronous)?,
        record_wall_time: r.switch("wall_time", a.wall_time)?,
        checkpoint_every: r.get("checkpoint_every", a.checkpoint_every, d.checkpoint_every)?,
        boundary: parse::<BoundaryMode>(&r.get("boundary", a.boundary, d.boundary.to_string())?)?,
    };
    if let Some(n) = threads {
        if cfg.workers > n {
            info!("RD_THREADS={n} caps workers at {n}");
            cfg.workers = n;
        }
    }
    cfg.validate()?;

    let nd = NetConfig::default();
    let (start, net_cfg) = match &resume {
        None => {
            if cfg.stage == 2 {
                bail!("stage 2 needs a stage-1 checkpoint: pass --resume <checkpoint>");
            }
            let net = NetConfig {
                trunk_layers: r.get("trunk_layers", a.trunk_layers, nd.trunk_layers)?,
                trunk_channels: r.get("trunk_channels", a.trunk_channels, nd.trunk_channels)?,
                shared_trunk: !r.switch("separate_trunks", a.separate_trunks)?,
                init_seed: r.get("init_seed", a.init_seed, nd.init_seed)?,
            };
            (None, net)
        }
        Some(p) => {
            let ck = Checkpoint::load(p)
                .with_context(|| format!("loading checkpoint {}", p.display()))?;
            let stored = *ck.params.config();
            let layers = r.get_opt("trunk_layers", a.trunk_layers)?;
            let channels = r.get_opt("trunk_channels", a.trunk_channels)?;
            let separate = r.switch("separate_trunks", a.separate_trunks)?;
            let init_seed = r.get_opt("init_seed", a.init_seed)?;
            let requested = NetConfig {
                trunk_layers: layers.unwrap_or(stored.trunk_layers),
                trunk_channels: channels.unwrap_or(stored.trunk_channels),
                shared_trunk: if separate { false } else { stored.shared_trunk },
                init_seed: init_seed.unwrap_or(stored.init_seed),
            };
            let diff = stored.mismatches(&requested);
            if !diff.is_empty() {
                bail!(
                    "checkpoint network differs from the requested one in: {}",
                    diff.join(", ")
                );
            }
            (Some(ck), stored)
        }
    };
    let settings = r.finish("train")?;
    echo("train", &settings);

    let corpus = load_corpus(&corpus_dir, Split::Train, cfg.augment)?;
    let mut outputs = Outputs::new();
    let out = outputs.track(out);
    let log_path = outputs.track(log_path);
    let mut trainer = match start {
        Some(ck) => Trainer::resume(cfg.clone(), ck)?,
        None => Trainer::new(cfg.clone(), NetworkParams::init(net_cfg)?)?,
    };
    info!(
        "training stage {} for {} episodes ({} parameters)",
        cfg.stage,
        cfg.episodes,
        trainer.params().len()
    );
    if let Err(e) = trainer.run(&corpus, Some(&out)) {
        let dump = out.with_extension("failure.txt");
        if let Some(d) = trainer.diagnostics() {
            if fs::write(&dump, d).is_ok() {
                eprintln!("diagnostic state written to {}", dump.display());
            }
        }
        return Err(e.into());
    }
    trainer.log().write_csv(&log_path)?;
    if let Some(last) = trainer.log().rows.last() {
        info!(
            "done: last episode mean_reward {:.4e}, value_loss {:.4}",
            last.mean_reward, last.value_loss
        );
    }
    info!("checkpoint {}, log {}", out.display(), log_path.display());
    outputs.commit();
    Ok(())
}

fn parse_pixels(s: &str) -> Result<Vec<PixelCoord>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (x, y) = p
                .split_once(',')
                .ok_or_else(|| anyhow!("bad pixel `{p}`, expected x,y"))?;
            Ok(PixelCoord::new(parse(x.trim())?, parse(y.trim())?))
        })
        .collect()
}

fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    output.with_file_name(format!("{stem}{suffix}"))
}

pub fn denoise(a: DenoiseArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let model = path(&mut r, "model", a.model)?;
    let input = path(&mut r, "input", a.input)?;
    let output = path(&mut r, "output", a.output)?;
    let truth = opt_path(&mut r, "truth", a.truth)?;
    let steps = r.get("steps", a.steps, 5usize)?;
    let boundary: BoundaryMode = parse(&r.get("boundary", a.boundary, "replicate".to_string())?)?;
    let dump_actions = r.switch("dump_actions", a.dump_actions)?;
    let kernels = r.get_opt::<String>("dump_kernels", a.dump_kernels)?;
    let zoom = r.get("kernel_zoom", a.kernel_zoom, 8usize)?;
    let settings = r.finish("denoise")?;
    echo("denoise", &settings);
    let anchors = kernels.as_deref().map(parse_pixels).transpose()?;

    let net = load_params(&model).with_context(|| format!("loading model {}", model.display()))?;
    let g = load_image(&input)?;
    let f = truth.as_ref().map(load_image).transpose()?;
    let res = denoise_with(&g, f.as_ref(), &net, steps, boundary)?;

    let mut outputs = Outputs::new();
    save_image(&res.denoised, outputs.track(&output))?;
    if dump_actions {
        for (t, map) in res.action_maps.iter().enumerate() {
            let p = outputs.track(sibling(&output, &format!(".actions{t}.ppm")));
            save_ppm(&render_action_map(map), &p)?;
        }
        info!(
            "wrote {} action maps (greedy selection)",
            res.action_maps.len()
        );
    }
    if let Some(anchors) = anchors {
        for k in composite_kernels(&res.trace, Some(&anchors))? {
            let p = outputs.track(sibling(
                &output,
                &format!(".kernel_{}_{}.pgm", k.anchor.x, k.anchor.y),
            ));
            save_image(&render_kernel(&k, zoom)?, &p)?;
        }
    }
    if let Some(p) = res.psnr_vs_truth {
        let before = psnr(&g, f.as_ref().unwrap())?;
        info!("PSNR {before:.3} dB -> {p:.3} dB");
    }
    outputs.commit();
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let model = path(&mut r, "model", a.model)?;
    let corpus_dir = path(&mut r, "corpus", a.corpus)?;
    let output = opt_path(&mut r, "output", a.output)?;
    let noise = resolve_noise(&mut r, a.noise)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let steps = r.get("steps", a.steps, 5usize)?;
    let baseline = r.get_opt::<String>("baseline", a.baseline)?;
    let pm = match baseline.as_deref() {
        None => {
            r.accept(&["kappa", "iterations", "contrast", "diffusivity", "scheme"]);
            None
        }
        Some("pm") => Some(resolve_diffusion(&mut r, a.diffusion)?),
        Some(other) => bail!("unknown baseline `{other}` (expected pm)"),
    };
    let settings = r.finish("evaluate")?;
    echo("evaluate", &settings);

    let net = load_params(&model).with_context(|| format!("loading model {}", model.display()))?;
    let corpus = load_corpus(&corpus_dir, Split::Test, false)?;
    let rows = evaluate_corpus(&corpus, &net, &noise, seed, steps, pm.as_ref())?;

    let mut csv = String::from("image,noisy_psnr,denoised_psnr");
    if pm.is_some() {
        csv.push_str(",pm_psnr");
    }
    csv.push('\n');
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{}",
            row.name, row.noisy_psnr, row.denoised_psnr
        ));
        if let Some(b) = row.baseline_psnr {
            csv.push_str(&format!(",{b}"));
        }
        csv.push('\n');
    }
    let (n, d, b) = eval_means(&rows);
    csv.push_str(&format!("mean,{n},{d}"));
    if let Some(b) = b {
        csv.push_str(&format!(",{b}"));
    }
    csv.push('\n');
    info!("mean PSNR: noisy {n:.3} dB, denoised {d:.3} dB (greedy)");
    match output {
        Some(p) => {
            let mut outputs = Outputs::new();
            fs::write(outputs.track(&p), csv)
                .with_context(|| format!("writing {}", p.display()))?;
            outputs.commit();
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn noise(a: NoiseArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let input = path(&mut r, "input", a.input)?;
    let output = path(&mut r, "output", a.output)?;
    let spec = resolve_noise(&mut r, a.noise)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let settings = r.finish("noise")?;
    echo("noise", &settings);
    let img = load_image(&input)?;
    let noisy = noisy_observation(&img, &spec, seed)?;
    let mut outputs = Outputs::new();
    save_image(&noisy, outputs.track(&output))?;
    info!("PSNR of noisy image {:.3} dB", psnr(&noisy, &img)?);
    outputs.commit();
    Ok(())
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let out = path(&mut r, "out", a.out)?;
    let count = r.get("count", a.count, 16usize)?;
    let height = r.get("height", a.height, 64usize)?;
    let width = r.get("width", a.width, 64usize)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let textured = r.switch("textured", a.textured)?;
    let settings = r.finish("gen-corpus")?;
    echo("gen-corpus", &settings);
    if count == 0 || height < 2 || width < 2 {
        bail!("need count >= 1 and images of at least 2x2 pixels");
    }
    let corpus = synthetic_corpus(count, height, width, seed, SyntheticStyle { textured });
    let mut outputs = Outputs::new();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (name, img) in corpus.names.iter().zip(&corpus.images) {
        save_image(img, outputs.track(out.join(format!("{name}.pgm"))))?;
    }
    info!("wrote {count} images to {}", out.display());
    outputs.commit();
    Ok(())
}

pub fn baseline_pm(a: BaselinePmArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let input = path(&mut r, "input", a.input)?;
    let output = path(&mut r, "output", a.output)?;
    let truth = opt_path(&mut r, "truth", a.truth)?;
    let cfg = resolve_diffusion(&mut r, a.diffusion)?;
    let settings = r.finish("baseline-pm")?;
    echo("baseline-pm", &settings);
    let g = load_image(&input)?;
    let u = pm_denoise(&g, &cfg);
    let mut outputs = Outputs::new();
    save_image(&u, outputs.track(&output))?;
    if let Some(t) = truth {
        let f = load_image(&t)?;
        info!("PSNR {:.3} dB -> {:.3} dB", psnr(&g, &f)?, psnr(&u, &f)?);
    }
    outputs.commit();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_lists() {
        let p = parse_pixels("1,2; 3 ,4;").unwrap();
        assert_eq!(p, vec![PixelCoord::new(1, 2), PixelCoord::new(3, 4)]);
        assert!(parse_pixels("1;2").is_err());
    }

    #[test]
    fn outputs_are_removed_unless_committed() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        {
            let mut o = Outputs::new();
            fs::write(o.track(&a), "x").unwrap();
        }
        assert!(!a.exists());
        let mut o = Outputs::new();
        fs::write(o.track(&a), "x").unwrap();
        o.commit();
        assert!(a.exists());
    }
}
