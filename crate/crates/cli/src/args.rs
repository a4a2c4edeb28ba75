use std::path::PathBuf;

use clap::{Parser, Subcommand};
use esiqa_core::DisplayMode;

#[derive(Debug, Parser)]
#[command(name = "esiqa", version, about = "Stereo image quality studies, models and reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen raters and write per-image MOS for one display mode.
    Mos {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        mode: DisplayMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Discriminability and confidence-interval curves against panel size.
    Discriminability {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        mode: DisplayMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Panel sizes; every size from 2 to the full panel when omitted.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Low-level feature table and density series of the left views.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Train on the training side of a scene-grouped split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the mode in the config file.
        #[arg(long)]
        mode: Option<DisplayMode>,
        /// Key-value training and model configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed; seeds initialization, shuffling and the split.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test side of the split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mode: DisplayMode,
        /// Split seed; defaults to the seed stored in the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Raw ratings; enables both ROC analyses.
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long, default_value = "esiqanet")]
        method: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC analyses and bootstrap significance for several methods.
    Roc {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        mode: DisplayMode,
        /// `name=path` to a CSV with `image_id` and `predicted` columns; repeatable.
        #[arg(long = "predictions", required = true)]
        predictions: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// MOS and MOS-difference histograms.
    Report {
        /// `mode=path` to a MOS CSV; repeatable.
        #[arg(long = "mos", required = true)]
        mos: Vec<String>,
        /// Enables the matched captured/synthesized report.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the rating service.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings_log: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stage activation heatmap of one image.
    Heatmap {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: String,
        /// 1 to 4.
        #[arg(long, default_value_t = 4)]
        stage: usize,
        #[arg(long)]
        out: PathBuf,
    },
}
