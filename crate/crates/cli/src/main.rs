//! `ddcrp`: object proposals from ddCRP segmentation samples.
//!
//! Exit status: 0 on success, 1 for I/O and unreadable input, 2 for
//! configuration or validation errors, 3 for numerical failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ddcrp", version, about = "Ranked object proposals from ddCRP segmentation samples")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
pub struct Common {
    /// Pipeline configuration JSON (default: built-in defaults).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the superpixel and sampler seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration.
    Config,

    /// Superpixels only: writes labels.png.
    Segment {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },

    /// Raw ddCRP samples: writes labels.png and run.log.
    Sample {
        #[arg(long)]
        image: PathBuf,
        /// Precomputed label map (PNG or CSV) instead of running SLIC.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },

    /// Proposals with likelihoods: writes proposals.jsonl, labels.png and run.log.
    Propose {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },

    /// Scores and orders proposals: writes ranked JSON Lines.
    Rank {
        #[arg(long)]
        proposals: PathBuf,
        /// Label map the proposals refer to.
        #[arg(long)]
        labels: PathBuf,
        /// Source image, used to check dimensions.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Scoring model JSON (overrides the config).
        #[arg(long)]
        scorer: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Rank by likelihood-weighted score.
        #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
        weighted: Option<bool>,
        /// Apply non-maxima suppression.
        #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
        nms: Option<bool>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Fits a scoring model on labeled frames listed in a manifest.
    TrainScorer {
        /// JSON array of {"frame_id", "image", "labels", "truth"}; paths relative to the manifest.
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-3)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Precision, recall and global recall curves for ranked proposals.
    Evaluate {
        /// Directory of `<frame_id>.jsonl` ranked proposal files.
        #[arg(long)]
        ranked: PathBuf,
        /// Directory of `<frame_id>.png` id maps or `<frame_id>.jsonl` boxes.
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Also write curves.svg.
        #[arg(long)]
        svg: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Config => commands::print_config(),
        Command::Segment { image, common, out } => commands::segment(&image, &common, &out),
        Command::Sample { image, labels, common, out } => commands::sample(&image, labels.as_deref(), &common, &out),
        Command::Propose { image, labels, common, out } => {
            commands::propose(&image, labels.as_deref(), &common, &out)
        }
        Command::Rank { proposals, labels, image, scorer, common, weighted, nms, top_k, out } => {
            let flags = commands::RankFlags { weighted, nms, top_k };
            commands::rank(&proposals, &labels, image.as_deref(), scorer.as_deref(), &common, flags, &out)
        }
        Command::TrainScorer { manifest, common, ridge, out } => commands::train_scorer(&manifest, &common, ridge, &out),
        Command::Evaluate { ranked, truth, common, out, svg } => commands::evaluate(&ranked, &truth, &common, &out, svg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::one_line(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
