//! The `sfmkit` command-line tool as a library, so it can also be driven in-process.
//!
//! Exit codes: 0 success, 2 usage, 3 bad data or file format, 4 diverged.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "sfmkit", version, about = "Self-supervised structure-from-motion corpus and fitting tools")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads; SS3D_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split frame directories into clips at shot boundaries.
    Shots(ShotsArgs),
    /// Score every clip of a manifest with its multi-view signal.
    Score(ScoreArgs),
    /// Keep the clips of a scored manifest that pass the curriculum threshold.
    Curriculum(CurriculumArgs),
    /// Assign clips to sub-domains by k-means over their embeddings.
    Cluster(ClusterArgs),
    /// Render a synthetic clip with ground truth.
    Synth(SynthArgs),
    /// Fit depth, poses and focal length to clips.
    Fit(FitArgs),
    /// Distillation loss between two prediction directories.
    DistillLoss(DistillArgs),
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct ShotsArgs {
    /// Directories of PNG frames, each read in file-name order.
    #[arg(required = true)]
    pub frames_dirs: Vec<PathBuf>,
    /// L1 histogram distance (range 0..2) above which a cut is declared.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    pub fps: f64,
    /// Shots shorter than this many frames are dropped.
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    /// Output manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScoreArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub max_matches: usize,
    /// Output manifest; defaults to rewriting the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CurriculumArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    /// Clips below this quantile of the corpus MVS are always dropped.
    #[arg(long, default_value_t = sfmkit::curriculum::DEFAULT_FLOOR_QUANTILE)]
    pub floor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ClusterArgs {
    /// JSON Lines of `{"clip_id", "vector"}`.
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Manifest to annotate with cluster ids; without it only assignments are written.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KindArg {
    Plane,
    Heightfield,
    Rotation,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Heightfield)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Camera displacement per frame as a fraction of the minimum scene depth.
    #[arg(long, default_value_t = 0.1)]
    pub baseline: f64,
    /// Rotation per frame, degrees.
    #[arg(long, default_value_t = 2.0)]
    pub rot: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub fps: f64,
    /// Clip id; defaults to the output directory name.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// A manifest, or a directory of PNG frames.
    pub input: PathBuf,
    /// JSON optimizer settings; missing fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial focal length in pixels; defaults to 1.2 * max(W, H).
    #[arg(long)]
    pub focal_init: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DepthSpaceArg {
    Raw,
    Inverse,
}

#[derive(Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub expert: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub lambda: f64,
    /// Photometric term added to the weighted distillation term.
    #[arg(long, default_value_t = 0.0)]
    pub photometric: f64,
    #[arg(long, value_enum, default_value_t = DepthSpaceArg::Raw)]
    pub depth_space: DepthSpaceArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AlignArg {
    Sim3,
    Se3,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    Median,
    None,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = AlignArg::Sim3)]
    pub align: AlignArg,
    #[arg(long, value_enum, default_value_t = ScalingArg::Median)]
    pub scaling: ScalingArg,
    /// Depth cap in scene units.
    #[arg(long, default_value_t = 80.0)]
    pub max_depth: f64,
    #[arg(long, default_value_t = 1)]
    pub rpe_delta: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Bad flag values found after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(sfmkit::Error::Diverged { .. }) = cause.downcast_ref::<sfmkit::Error>() {
            return 4;
        }
    }
    3
}

/// Worker count from SS3D_THREADS, else the flag.
fn worker_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    let threads = match std::env::var("SS3D_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| UsageError(format!("SS3D_THREADS must be a positive integer, got '{v}'")))?),
        Err(_) => flag,
    };
    if threads == Some(0) {
        return Err(UsageError("the worker count must be positive".into()).into());
    }
    Ok(threads)
}

fn dispatch(command: Command, json: bool) -> anyhow::Result<()> {
    match command {
        Command::Shots(a) => commands::shots(&a, json),
        Command::Score(a) => commands::score(&a, json),
        Command::Curriculum(a) => commands::curriculum(&a, json),
        Command::Cluster(a) => commands::cluster(&a, json),
        Command::Synth(a) => commands::synth(&a, json),
        Command::Fit(a) => commands::fit(&a, json),
        Command::DistillLoss(a) => commands::distill_loss(&a, json),
        Command::Eval(a) => commands::eval(&a, json),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match worker_count(cli.threads)? {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| dispatch(cli.command, cli.json)),
        None => dispatch(cli.command, cli.json),
    }
}

/// Parses `args` (program name first) and runs the subcommand; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
