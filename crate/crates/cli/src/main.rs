//! `splatcast`: generate synthetic scenes, train the three stages, render,
//! forecast and evaluate.
//!
//! Human-readable progress goes to stderr; machine-readable records (one
//! JSON object per line) go to stdout or to `--records`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "splatcast",
    version,
    about = "Deformable Gaussian scenes with key-point forecasting"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Write records to this file instead of stdout.
    #[arg(long, global = true)]
    pub records: Option<PathBuf>,
    /// Dataset directory; overrides `paths.data`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Run directory for checkpoints; overrides `paths.run`.
    #[arg(long, global = true)]
    pub run: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Views {
    Train,
    Test,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Observed,
    Future,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Every frame shows the scene at the last observed time.
    Freeze,
    /// The deformation field queried at the requested time.
    Stage1,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene with ground truth into the dataset directory.
    Generate {
        #[arg(long)]
        generator: Option<String>,
    },
    /// Stage 1: deformable Gaussians with hyper-features.
    Train1(TrainArgs),
    /// Stage 2: key-point distillation from a stage-1 checkpoint.
    Train2(TrainArgs),
    /// Stage 3: graph forecasting network from a stage-2 checkpoint.
    Train3(TrainArgs),
    /// Render dataset views from a checkpoint of any stage.
    Render {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        views: Views,
        /// Render every view at this time instead of its own.
        #[arg(long)]
        time: Option<f64>,
        /// Output directory for PNGs (default: <run>/render).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast past the last observation and render the predicted frames.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Time span beyond the last observed time.
        #[arg(long, default_value_t = 0.2)]
        horizon: f64,
        /// Frames rendered across the horizon (plus the last observed one).
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Cameras, taken in turn from these manifest views.
        #[arg(long, value_enum, default_value = "test")]
        views: Views,
        /// Use this one view for every frame.
        #[arg(long)]
        camera: Option<usize>,
        /// Output directory (default: <run>/predict).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR/SSIM against dataset images, optionally with baselines.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        views: Views,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        /// Forecasting protocol: all views at t ≥ the future cutoff.
        #[arg(long)]
        future_split: bool,
        /// Baseline rows over the same frames.
        #[arg(long, value_enum, value_delimiter = ',')]
        compare: Vec<Baseline>,
        /// Stage-1 checkpoint for the time-extrapolation baseline (default: the field inside the evaluated checkpoint).
        #[arg(long)]
        stage1: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Input checkpoint of the previous stage (default: <run>/stageN-1.ckp).
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Output checkpoint (default: <run>/stageN.ckp).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint of this stage.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Train only on t < the future cutoff.
    #[arg(long)]
    pub future_split: bool,
    /// Override the iteration count (stage 2: phase 1 + phase 2 split evenly).
    #[arg(long)]
    pub iterations: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let records = cli.global.records.clone();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = splatcast::eval::Record::Error {
                message: format!("{e:#}"),
            }
            .to_line();
            match records {
                Some(p) => {
                    use std::io::Write;
                    let f = std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(p);
                    let _ = f.and_then(|mut f| writeln!(f, "{line}"));
                }
                None => println!("{line}"),
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
