mod commands;
mod config;
mod data;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use octcyst::gmp::{Coalesce, GmpParams};
use octcyst::metrics::Combiner;
use octcyst::model::Hyperparams;
use octcyst::segmentation::SegParams;
use std::path::PathBuf;
use std::process::ExitCode;

/// Cyst segmentation of OCT volumes from generalized motion patterns.
///
/// Volumes are OVF files. A preprocessed volume is addressed by its prefix:
/// `PREFIX_roi.ovf` (denoised ROI, f32), `PREFIX_prior.ovf` (retinal band, u8)
/// and, for training and evaluation, `PREFIX_roigt.ovf` (cyst truth in ROI
/// space, u8). `preprocess` writes all three.
///
/// Any long flag of a subcommand may also be given as a `key=value` line in
/// the file passed to `--config`; flags on the command line win.
#[derive(Parser, Debug)]
#[command(author, version, about)]
struct Cli {
    /// key=value file with defaults for subcommand flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent volumes and slices
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate synthetic volumes with cyst truth and layer paths
    Phantom(PhantomArgs),
    /// Denoise, crop and trace the retinal band of raw volumes
    Preprocess(PreprocessArgs),
    /// Build the motion-pattern cake of a preprocessed volume
    ///
    /// The output stacks the K planes of every B-scan: slice `z * K + k`
    /// holds direction `k` (theta = 180 k / K degrees) of B-scan `z`.
    Gmp(GmpCmdArgs),
    /// Train the network on preprocessed volumes
    Train(TrainArgs),
    /// Write the cyst probability map of a preprocessed volume
    Infer(InferArgs),
    /// Threshold and cluster a probability map into a cyst mask
    Segment(SegmentArgs),
    /// Score predicted masks against ground truth
    Eval(EvalArgs),
    /// Sweep K, N or the threshold and report mean scores
    Sweep(SweepArgs),
    /// Write every slice of a volume as an 8-bit PGM
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
struct GmpOpts {
    /// Number of motion directions (K)
    #[arg(long, default_value_t = 8)]
    directions: usize,
    /// Translation half extent (N); each stack holds 2N+1 images
    #[arg(long, default_value_t = 5)]
    extent: usize,
    /// Translation step in pixels
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Stack reducer: min or max
    #[arg(long, default_value = "min")]
    coalesce: Coalesce,
}

impl GmpOpts {
    fn params(&self) -> anyhow::Result<GmpParams> {
        Ok(GmpParams::new(self.extent, self.delta, self.directions, self.coalesce)?)
    }
}

#[derive(Args, Debug, Clone)]
struct SegOpts {
    /// Probability threshold
    #[arg(long, default_value_t = 0.35)]
    threshold: f64,
    /// Number of intensity clusters
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Lowest-mean clusters kept as cyst
    #[arg(long, default_value_t = 1)]
    retain: usize,
}

impl SegOpts {
    fn params(&self) -> anyhow::Result<SegParams> {
        let p = SegParams {
            threshold: self.threshold,
            k: self.k,
            retain: self.retain,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Nesterov momentum
    #[arg(long, default_value_t = 0.75)]
    momentum: f64,
    /// Minibatch size
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Seed of weight initialization and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write an intermediate checkpoint every this many epochs (0: only at the end)
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// ReLU between hidden convolutions instead of identity
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    relu: bool,
}

impl TrainOpts {
    fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            ..Hyperparams::default()
        }
    }
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of volumes; volume i uses seed + i
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// B-scans per volume
    #[arg(long, default_value_t = 8)]
    slices: usize,
    /// Cysts per volume
    #[arg(long, default_value_t = 5)]
    cysts: usize,
    /// Speckle strength (0 disables it)
    #[arg(long, default_value_t = 0.3)]
    speckle: f64,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Raw volumes
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Full-size cyst truth, one per input in the same order
    #[arg(long, num_args = 1..)]
    gt: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Total-variation weight
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Total-variation iterations
    #[arg(long, default_value_t = 50)]
    iters: usize,
}

#[derive(Args, Debug)]
struct GmpCmdArgs {
    /// Preprocessed volume prefix
    #[arg(long)]
    volume: PathBuf,
    /// Output cake volume
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gmp: GmpOpts,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Preprocessed volume prefixes with ROI truth
    #[arg(long, required = true, num_args = 1..)]
    volume: Vec<PathBuf>,
    /// Final checkpoint
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    gmp: GmpOpts,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Preprocessed volume prefix
    #[arg(long)]
    volume: PathBuf,
    /// Output probability volume (f32, half resolution)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gmp: GmpOpts,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Probability volume written by `infer`
    #[arg(long)]
    prob: PathBuf,
    /// Preprocessed volume prefix whose ROI intensities drive the clustering
    #[arg(long)]
    volume: PathBuf,
    /// Output cyst mask (u8, ROI size)
    #[arg(long)]
    out: PathBuf,
    /// Also write the thresholded map before clustering
    #[arg(long)]
    detected: Option<PathBuf>,
    #[command(flatten)]
    seg: SegOpts,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Unmasked,
    Masked,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted masks
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    /// First grader's masks, one per prediction
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    /// Second grader's masks, one per prediction
    #[arg(long, num_args = 1..)]
    gt2: Vec<PathBuf>,
    /// grader1, grader2, intersection or union
    #[arg(long, default_value = "grader1")]
    combiner: Combiner,
    #[arg(long, value_enum, default_value = "unmasked")]
    mode: ModeArg,
    /// Radius of the excluded central disk in mm
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    /// Table destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    K,
    N,
    Threshold,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Comma-separated grid values
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Evaluation volume prefixes
    #[arg(long, required = true, num_args = 1..)]
    test: Vec<PathBuf>,
    /// Training volume prefixes, used to fill in missing K/N checkpoints
    #[arg(long, num_args = 1..)]
    train_volume: Vec<PathBuf>,
    /// Directory of `k<value>.gmpc` or `n<value>.gmpc` checkpoints
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Checkpoint for the threshold sweep
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Table destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    gmp: GmpOpts,
    #[command(flatten)]
    seg: SegOpts,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Intensity mapped to black; volume minimum when absent
    #[arg(long)]
    lo: Option<f32>,
    /// Intensity mapped to white; volume maximum when absent
    #[arg(long)]
    hi: Option<f32>,
}

fn main() -> ExitCode {
    // Config entries are spliced in ahead of the user's flags; a repeated
    // flag keeps its last value.
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        cmd = cmd.mut_subcommand(n, |s| s.args_override_self(true));
    }
    let argv = match config::inject_config(&cmd, std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let (name, sub_m) = matches.subcommand().expect("subcommand is required");
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let mut echo = config::config_echo(sub, sub_m);
    echo.push(("jobs".into(), cli.jobs.to_string()));
    let ctx = commands::Ctx {
        jobs: cli.jobs.max(1),
        manifest: config::Manifest::new(name, echo),
    };
    match commands::run(cli.command, ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
