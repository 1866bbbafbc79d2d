//! `mgml`: train, evaluate, ablate and inspect feature-ensemble networks.
//!
//! Exit status is 0 on success, 2 for configuration or input errors and 3
//! for failures while computing.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgml::{BranchSet, CropStrategy};

#[derive(Parser, Debug)]
#[command(name = "mgml", version, about = "Multi-granularity multi-level feature ensemble networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Base seed for initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Branches to train and vote, e.g. `mb,ffb,fem`.
    #[arg(long)]
    pub branches: Option<BranchSet>,
    /// Region proposal strategy: `7crop` or `grid`.
    #[arg(long)]
    pub strategy: Option<CropStrategy>,
    /// Crop scale in (0, 1).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Grid loop bound; the grid has (k+1)^2 windows.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model; writes checkpoint.mgc, metrics.csv and summary.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write eval.txt and confusion.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train baseline, +FFB, +FEM and full variants over `train.runs` seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Compare the seven-crop and grid proposals instead.
        #[arg(long)]
        compare_crop: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the anchors for an `h x w` map, one `x1,y1,x2,y2` per line.
    InspectAnchors {
        #[arg(long)]
        h: usize,
        #[arg(long)]
        w: usize,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = CropStrategy::SevenCrop)]
        strategy: CropStrategy,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Write every intermediate feature of one test sample as MGT1 files.
    DumpFeatures {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the configured dataset as PPM files plus a manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out, overrides } => commands::train(&config, &out, &overrides),
        Command::Eval {
            config,
            checkpoint,
            out,
            overrides,
        } => commands::eval(&config, &checkpoint, out.as_deref(), &overrides),
        Command::Ablate {
            config,
            out,
            compare_crop,
            overrides,
        } => commands::ablate(&config, &out, compare_crop, &overrides),
        Command::InspectAnchors {
            h,
            w,
            sigma,
            strategy,
            k,
        } => commands::inspect_anchors(h, w, sigma, strategy, k),
        Command::DumpFeatures {
            config,
            checkpoint,
            sample,
            out,
            overrides,
        } => commands::dump_features(&config, &checkpoint, sample, &out, &overrides),
        Command::GenData { config, out } => commands::gen_data(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mgml: {e}");
            ExitCode::from(if e.is_config_class() { 2 } else { 3 })
        }
    }
}
