//! `rotavg`: rotation averaging from the command line.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const FORMATS: &str = "\
File formats (UTF-8, one record per line, '#' starts a comment):
  Graph:      NODES <n>                                 (optional on input)
              EDGE <i> <j> <qw> <qx> <qy> <qz> <weight>
              The quaternion (Hamilton, scalar first) encodes R_ij = R_j * R_i^T;
              weight is a non-negative integer (correspondence count).
  Rotations:  ROT <i> <qw> <qx> <qy> <qz>
  Scene:      CAMERA <id> <r11> <r12> ... <r33> <cx> <cy> <cz> <f> <px> <py>
              POINT <id> <x> <y> <z>
              OBS <camera> <point> <u> <v>
              PRIOR <camera> <r11> <r12> ... <r33>
              PAIR <i> <j>
              Camera rotations are world-to-camera, row-major; PRIOR holds the
              averaged rotation and PAIR a known-rotation term.
  Reports are JSON, benchmark tables CSV.

Exit codes: 0 success, 1 usage error or unreadable file, 2 data or solver error.
No output file is written unless the command succeeds.";

#[derive(Parser, Debug)]
#[command(name = "rotavg", version, about = "Hybrid rotation averaging: view-graph filtering, global BCM solve, robust IRLS refinement")]
#[command(after_long_help = FORMATS)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic view graph with ground-truth rotations.
    #[command(after_long_help = FORMATS)]
    Synth(SynthArgs),
    /// Remove edges that fail weak-triplet loop checks.
    #[command(after_long_help = FORMATS)]
    Filter(FilterArgs),
    /// Global block-coordinate solve of the rank-3 relaxation.
    #[command(after_long_help = FORMATS)]
    Solve(SolveArgs),
    /// Robust IRLS refinement from given initial rotations.
    #[command(after_long_help = FORMATS)]
    Refine(RefineArgs),
    /// Filter, global solve and refinement in one run.
    #[command(after_long_help = FORMATS)]
    Hybrid(HybridArgs),
    /// Compare estimated rotations with ground truth after alignment.
    #[command(after_long_help = FORMATS)]
    Eval(EvalArgs),
    /// Run a synthetic benchmark grid and write a CSV table.
    #[command(after_long_help = FORMATS)]
    Bench(BenchArgs),
    /// Rotation-regularised bundle adjustment on a drifting camera ring.
    #[command(name = "ba-demo", after_long_help = FORMATS)]
    BaDemo(BaDemoArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TopologyArg {
    /// Random spanning tree plus uniformly drawn extra edges.
    Random,
    /// Views on a path; edges join views at most --window apart.
    Sequential,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of views.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of edges.
    #[arg(long, default_value_t = 300)]
    pub m: usize,
    /// Standard deviation of the inlier perturbation angle, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub noise_deg: f64,
    /// Fraction of edges replaced by outliers.
    #[arg(long, default_value_t = 0.0)]
    pub outlier_ratio: f64,
    /// Smallest outlier perturbation angle, degrees.
    #[arg(long, default_value_t = 60.0)]
    pub outlier_min_deg: f64,
    /// Largest outlier perturbation angle, degrees.
    #[arg(long, default_value_t = 90.0)]
    pub outlier_max_deg: f64,
    /// Let outliers fall on spanning-tree edges too.
    #[arg(long)]
    pub allow_tree_outliers: bool,
    #[arg(long, value_enum, default_value_t = TopologyArg::Random)]
    pub topology: TopologyArg,
    /// Largest index gap of a sequential edge.
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output graph file.
    #[arg(long)]
    pub output: PathBuf,
    /// Output file for the ground-truth rotations.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// JSON report listing tree and outlier edges.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FilterOpts {
    /// Loop-error threshold, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub eps_deg: f64,
    /// Filter iterations.
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    /// Keep edges that no weak triplet reached.
    #[arg(long)]
    pub keep_unverified: bool,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub opts: FilterOpts,
    /// JSON-lines report (per-iteration statistics, then a summary); stderr when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitArg {
    /// Random orthonormal blocks from --seed.
    Random,
    /// Rotations chained along the maximum spanning tree.
    MstChain,
}

#[derive(Args, Debug, Clone)]
pub struct SolveOpts {
    #[arg(long, default_value_t = 1000)]
    pub max_sweeps: usize,
    /// Relative cost change per sweep below which the solve may stop.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Largest block change per sweep below which the solve may stop.
    #[arg(long, default_value_t = 1e-11)]
    pub block_tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub opts: SolveOpts,
    /// CSV of the cost after every sweep (`sweep,cost`, sweep 0 is the start).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    /// x²/(x²+σ²).
    GemanMcclure,
    /// Plain least squares.
    Quadratic,
}

#[derive(Args, Debug, Clone)]
pub struct RefineOpts {
    /// Robust loss scale, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub sigma_deg: f64,
    /// Outer IRLS iterations.
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = LossArg::GemanMcclure)]
    pub loss: LossArg,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Initial rotations, one per node.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub opts: RefineOpts,
    /// Node held fixed.
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Hybrid,
    Global,
    IrlsOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RefineEdgesArg {
    /// All input edges among registered views.
    Input,
    /// Only edges kept by the filter.
    Filtered,
}

#[derive(Args, Debug)]
pub struct HybridArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Rotations of the registered views.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Hybrid)]
    pub method: MethodArg,
    #[command(flatten)]
    pub filter: FilterOpts,
    #[command(flatten)]
    pub solve: SolveOpts,
    #[command(flatten)]
    pub refine: RefineOpts,
    #[arg(long, value_enum, default_value_t = RefineEdgesArg::Input)]
    pub refine_edges: RefineEdgesArg,
    /// JSON run report (unregistered views, costs, stage times).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Estimated rotations.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth rotations.
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON report file; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GridArg {
    /// n=100, m=300, outlier ratios 0 to 0.5 in steps of 0.05.
    Outliers,
    /// Growing graphs at outlier ratio 0.1.
    Sizes,
    /// One cell per --outlier-ratios entry at the given --n and --m.
    Custom,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = GridArg::Outliers)]
    pub grid: GridArg,
    /// Inlier noise, degrees.
    #[arg(long, default_value_t = 2.0)]
    pub noise_deg: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 300)]
    pub m: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub outlier_ratios: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "global,hybrid,irls-only")]
    pub methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for independent trials (0: all cores).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Write zero stage times so the table is byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON summary: mean error per cell and method.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaDemoArgs {
    #[arg(long, default_value_t = 20)]
    pub cameras: usize,
    #[arg(long, default_value_t = 400)]
    pub points: usize,
    /// Rotation drift of the last camera, degrees.
    #[arg(long, default_value_t = 10.0)]
    pub drift_deg: f64,
    /// Known-rotation weights to compare (pixel²/radian²); w=0 always runs as the baseline.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub weight: Vec<f64>,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub pixel_noise: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV with one row per weight; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the drifted start scene.
    #[arg(long)]
    pub save_start: Option<PathBuf>,
    /// Write the ground-truth scene.
    #[arg(long)]
    pub save_truth: Option<PathBuf>,
    /// Write the scene optimised with the last weight.
    #[arg(long)]
    pub save_result: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Filter(a) => commands::filter(a),
        Command::Solve(a) => commands::solve(a),
        Command::Refine(a) => commands::refine(a),
        Command::Hybrid(a) => commands::hybrid(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::BaDemo(a) => commands::ba_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rotavg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
