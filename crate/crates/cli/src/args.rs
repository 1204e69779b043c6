use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cplm_core::{Dims, LinearSolver, Method, Scale};

#[derive(Debug, Parser)]
#[command(name = "cplm", version, about = "CP decomposition of third-order tensors by Levenberg-Marquardt")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a CP model to a tensor, image or synthetic tensor.
    Decompose(DecomposeArgs),
    /// Expand a CP model back into a tensor or image.
    Reconstruct(ReconstructArgs),
    /// Run classic and modified LM from the same start and tabulate both.
    Compare(CompareArgs),
    /// Run a grid of synthetic problems and write one CSV row per run.
    Bench(BenchArgs),
    /// Describe a file, or report compression for given extents and rank.
    Info(InfoArgs),
}

/// Where the observed tensor comes from. Exactly one source is allowed.
#[derive(Debug, Args)]
#[group(skip)]
pub struct InputArgs {
    /// TNS3 tensor, or PNG/PPM image.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,

    /// Generate an IxJxK tensor.
    #[arg(long, value_name = "IxJxK")]
    pub synthetic: Option<Dims>,

    /// Build the synthetic tensor from rank-N uniform factors instead of
    /// uniform entries.
    #[arg(long, requires = "synthetic", value_name = "N")]
    pub true_rank: Option<usize>,

    /// Seed for the synthetic tensor.
    #[arg(long, requires = "synthetic", default_value_t = 0)]
    pub data_seed: u64,
}

/// Solver settings. Flags override `--config`, which overrides defaults.
#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    #[arg(long, short = 'r')]
    pub rank: Option<usize>,

    #[arg(long, value_name = "lm|mlm")]
    pub method: Option<Method>,

    #[arg(long)]
    pub max_iters: Option<usize>,

    /// Absolute tolerance on the residual norm.
    #[arg(long)]
    pub tol: Option<f64>,

    /// Tolerance on the residual norm relative to the data norm.
    #[arg(long)]
    pub rel_tol: Option<f64>,

    /// Tolerance on the largest gradient entry.
    #[arg(long)]
    pub grad_tol: Option<f64>,

    #[arg(long)]
    pub step_tol: Option<f64>,

    #[arg(long)]
    pub mu0: Option<f64>,

    #[arg(long)]
    pub nu0: Option<f64>,

    /// Gain-ratio threshold for accepting a step.
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,

    /// Seed for the initial factors.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_name = "unit|byte")]
    pub scale: Option<Scale>,

    #[arg(long, value_name = "dense|schur")]
    pub linear_solver: Option<LinearSolver>,

    /// JSON file with any of the settings above.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Threads for dense linear algebra.
    #[arg(long)]
    pub threads: Option<usize>,

    /// Leave timing fields empty or zero so reruns give identical files.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// CPD3 model output.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Per-iteration trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Summary JSON; printed to stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,

    /// Reconstructed tensor (TNS3) or image (PNG/PPM).
    #[arg(long)]
    pub reconstruction: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// CPD3 model.
    #[arg(long)]
    pub model: PathBuf,

    /// Output path; `.png`/`.ppm` write an image, anything else TNS3.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value = "unit", value_name = "unit|byte")]
    pub scale: Scale,

    /// Tensor or image to report the residual against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// Comparison CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Directory for one trace CSV per method.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Tensor extents, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "IxJxK,...")]
    pub dims: Vec<Dims>,

    /// Ranks, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Vec<usize>,

    /// Seeds, comma separated; each seeds both the data and the start.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,

    #[arg(long, value_delimiter = ',', default_value = "lm,mlm", value_name = "lm|mlm,...")]
    pub methods: Vec<Method>,

    /// JSON grid file: a list of `{"dims": "IxJxK", "ranks": [..], "seeds": [..]}`.
    #[arg(long)]
    pub grid: Option<PathBuf>,

    /// Build each tensor from rank-N factors instead of uniform entries.
    #[arg(long)]
    pub true_rank: Option<usize>,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// Benchmark CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// TNS3, CPD3, PNG or PPM file.
    #[arg(required_unless_present = "dims", conflicts_with = "dims")]
    pub path: Option<PathBuf>,

    #[arg(long, value_name = "IxJxK", requires = "rank")]
    pub dims: Option<Dims>,

    #[arg(long, short = 'r')]
    pub rank: Option<usize>,
}
