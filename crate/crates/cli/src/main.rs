mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rldiff",
    version,
    about = "Learned pixel-wise diffusion denoiser"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy/value network on a directory of PGM images.
    Train(Box<TrainArgs>),
    /// Denoise one image with a trained network.
    Denoise(DenoiseArgs),
    /// PSNR table over a test directory.
    Evaluate(EvaluateArgs),
    /// Write a noisy copy of an image.
    Noise(NoiseArgs),
    /// Generate a synthetic piecewise-constant image set.
    GenCorpus(GenCorpusArgs),
    /// Denoise one image with Perona-Malik diffusion.
    BaselinePm(BaselinePmArgs),
}

#[derive(Args, Clone, Default)]
pub struct NoiseFlags {
    /// gaussian, salt_pepper or poisson
    #[arg(long, alias = "kind")]
    pub noise: Option<String>,
    /// Gaussian standard deviation on the 0-255 scale
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Salt-and-pepper corruption fraction
    #[arg(long)]
    pub density: Option<f64>,
    /// Poisson peak intensity
    #[arg(long)]
    pub peak: Option<f64>,
}

#[derive(Args, Clone, Default)]
pub struct DiffusionFlags {
    /// Step size, at most 0.25
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Edge contrast K of the diffusivity 1/(1+(|grad u|/K)^2)
    #[arg(long)]
    pub contrast: Option<f64>,
    /// pm or linear
    #[arg(long)]
    pub diffusivity: Option<String>,
    /// balanced or verbatim
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of training images
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Checkpoint to continue from (required for stage 2)
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Number of training episodes (parameter updates)
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Steps per episode
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub entropy_beta: Option<f64>,
    #[arg(long)]
    pub stage: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random flips and rotations of sampled patches
    #[arg(long)]
    pub augment: bool,
    #[arg(long)]
    pub reward_scale: Option<f64>,
    #[arg(long)]
    pub value_coef: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// bootstrap or return
    #[arg(long)]
    pub advantage: Option<String>,
    #[arg(long)]
    pub omega_normalize: bool,
    /// value or both
    #[arg(long)]
    pub omega_grad: Option<String>,
    /// Asynchronous workers (not reproducible)
    #[arg(long = "async")]
    pub asynchronous: bool,
    /// Record real durations in the log's wall_ms column
    #[arg(long)]
    pub wall_time: bool,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// replicate or mask
    #[arg(long)]
    pub boundary: Option<String>,
    #[arg(long)]
    pub trunk_layers: Option<usize>,
    #[arg(long)]
    pub trunk_channels: Option<usize>,
    /// Separate trunks for the policy and value heads
    #[arg(long)]
    pub separate_trunks: bool,
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint or parameter file
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Clean image; reports PSNR when given
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub boundary: Option<String>,
    /// Write one action-map PPM per step next to the output
    #[arg(long)]
    pub dump_actions: bool,
    /// Pixels whose composite kernels to render, as "x,y;x,y"
    #[arg(long)]
    pub dump_kernels: Option<String>,
    /// Kernel raster cell size in pixels
    #[arg(long)]
    pub kernel_zoom: Option<usize>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory of clean test images
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// CSV destination; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Base noise seed; image i uses seed + i
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also run a baseline into extra columns (pm)
    #[arg(long)]
    pub baseline: Option<String>,
    #[command(flatten)]
    pub diffusion: DiffusionFlags,
}

#[derive(Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add low-amplitude stripe textures to some regions
    #[arg(long)]
    pub textured: bool,
}

#[derive(Args)]
pub struct BaselinePmArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub diffusion: DiffusionFlags,
}

fn init_threads() -> anyhow::Result<Option<usize>> {
    let Ok(v) = std::env::var("RD_THREADS") else {
        return Ok(None);
    };
    let n: usize = v
        .parse()
        .map_err(|_| anyhow::anyhow!("RD_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        anyhow::bail!("RD_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(Some(n))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = init_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(*a, threads),
        Command::Denoise(a) => commands::denoise(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Noise(a) => commands::noise(a),
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::BaselinePm(a) => commands::baseline_pm(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
