//! `psvh`: dataset generation, hull construction, refinement, training,
//! evaluation, pose fitting and gradient checks.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{RunConfig, TrainPhase};

#[derive(Debug, Parser)]
#[command(name = "psvh", version, about = "Single-view visual hulls and hull-guided voxel refinement")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the numerical kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path; a file or a directory depending on the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Build the visual hull of one silhouette.
    Hull(HullArgs),
    /// Refine one coarse grid with a trained model or by carving.
    Refine(RefineArgs),
    /// Train the refiner on a dataset.
    Train(TrainArgs),
    /// Evaluate a model or baseline on a dataset and write CSV tables.
    Eval(EvalArgs),
    /// Compare hull-layer gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Recover a perturbed pose by descending the hull objective.
    Posefit(PosefitArgs),
    /// Render the silhouette of a grid, optionally degraded.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WhichPose {
    Gt,
    Est,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Silhouette box-blur radius in pixels.
    #[arg(long)]
    pub blur: Option<usize>,
    #[arg(long)]
    pub dilate: Option<usize>,
    #[arg(long)]
    pub erode: Option<usize>,
    /// Fraction of pixels flipped at random.
    #[arg(long)]
    pub flip: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub shapes: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub focal: Option<f64>,
    /// Comma-separated shape kinds, e.g. `box,chairoid`.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Euler-angle noise of the estimated pose, in degrees.
    #[arg(long)]
    pub rot_sigma: Option<f64>,
    #[arg(long)]
    pub trans_sigma: Option<f64>,
    /// Thin components dropped from each coarse grid.
    #[arg(long)]
    pub drop: Option<usize>,
    #[arg(long)]
    pub blobs: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[command(flatten)]
    pub degrade: DegradeArgs,
}

#[derive(Debug, Args)]
pub struct HullArgs {
    #[arg(long)]
    pub sil: PathBuf,
    /// `pose.json` holding intrinsics and poses.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long, value_enum, default_value = "gt")]
    pub which: WhichPose,
    /// Rotate the pose by this many degrees about a random axis first.
    #[arg(long, default_value_t = 0.0)]
    pub rotate_deg: f64,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Ground-truth grid; prints the fraction of its voxels inside the hull.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Zero occupancy outside the hull.
    Carve,
    /// Return the coarse grid unchanged.
    Identity,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub coarse: PathBuf,
    #[arg(long)]
    pub hull: PathBuf,
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Hull threshold for carving.
    #[arg(long, default_value_t = psvh_core::refine::DEFAULT_CARVE_TAU)]
    pub tau: f64,
    /// Ground-truth grid; enables the metrics row.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// CSV file the metrics row is appended to.
    #[arg(long, requires = "gt")]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "sample")]
    pub id: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub phase: Option<TrainPhase>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub noisy_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Start from these parameters instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoseArg {
    Gt,
    Est,
    Sweep,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "baseline")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Feed the model a constant all-ones hull.
    #[arg(long, requires = "model")]
    pub no_hull: bool,
    #[arg(long, value_enum)]
    pub pose: Option<PoseArg>,
    #[arg(long, value_enum)]
    pub silhouette: Option<WhichPose>,
    /// Comma-separated rotation buckets in degrees.
    #[arg(long, value_delimiter = ',')]
    pub buckets: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    pub cases: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub blur: Option<usize>,
    #[arg(long)]
    pub binarize: bool,
    #[arg(long)]
    pub pose_tol: Option<f64>,
    #[arg(long)]
    pub silhouette_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PosefitArgs {
    /// Sample directory with `vgt.grid`, `sil.pgm` and `pose.json`.
    #[arg(long, conflicts_with_all = ["grid", "sil", "pose"])]
    pub sample: Option<PathBuf>,
    #[arg(long, requires_all = ["sil", "pose"])]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub sil: Option<PathBuf>,
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Rotation applied to the ground-truth pose to get the start pose.
    #[arg(long, default_value_t = 5.0)]
    pub perturb_deg: f64,
    /// Box blur applied to the observed silhouette.
    #[arg(long)]
    pub blur: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub fit_translation: bool,
    /// Threshold the loaded silhouette at 0.5 before blurring.
    #[arg(long)]
    pub binarize: bool,
    /// Exit with code 4 when the final rotation error exceeds this.
    #[arg(long)]
    pub max_error_deg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long, value_enum, default_value = "gt")]
    pub which: WhichPose,
    #[arg(long, default_value_t = psvh_core::geometry::DEFAULT_IMAGE_SIZE)]
    pub image_size: usize,
    #[command(flatten)]
    pub degrade: DegradeArgs,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_globals(cli.seed, cli.threads, cli.out);
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(exit::usage)?;
    }
    match cli.command {
        Command::Gen(a) => commands::gen(&mut cfg, a),
        Command::Hull(a) => commands::hull(&cfg, a),
        Command::Refine(a) => commands::refine(&cfg, a),
        Command::Train(a) => commands::train(&mut cfg, a),
        Command::Eval(a) => commands::eval(&mut cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(&mut cfg, a),
        Command::Posefit(a) => commands::posefit(&mut cfg, a),
        Command::Render(a) => commands::render(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
