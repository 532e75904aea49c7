//! `mitoclass`: batch front end for the TMA spot classification toolkit.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mitoclass", version, about = "Mitochondria-stain RCC subtype classification of TMA spots")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Master seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort: spots/*.png, manifest.csv, nuclei_truth.csv.
    Synth,
    /// White-balance spots (optionally with 8 dihedral variants each).
    Balance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        augment: bool,
    },
    /// Color deconvolution into nucleus, mitochondria and residual channels.
    Deconv {
        #[arg(long)]
        manifest: PathBuf,
        /// Inputs are already white-balanced.
        #[arg(long)]
        skip_balance: bool,
    },
    /// Nucleus detection; writes nuclei.csv and optional ROI overlays.
    Nuclei {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        overlay: bool,
        #[arg(long)]
        skip_balance: bool,
    },
    /// Feature tables.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Sample patches; writes patches/*.png and patch_manifest.csv.
    Patches {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        skip_balance: bool,
    },
    /// Train one forest on a whole table; writes model.txt and oob.txt.
    Train(TableSource),
    /// Leave-one-patient-out cross-validation; writes crossval/.
    Crossval {
        #[command(flatten)]
        input: TableSource,
        /// whole-image or patch aggregation.
        #[arg(long, default_value = "whole-image")]
        mode: String,
    },
    /// Accuracy against forest size; writes sweep.csv.
    SweepTrees {
        #[command(flatten)]
        input: TableSource,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,50,100")]
        grid: Vec<usize>,
        /// Evaluate one held-out patient (fold index) instead of the full LOPO.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, default_value = "whole-image")]
        mode: String,
    },
    /// Classical MDS of pairwise dissimilarities; writes mds/.
    Mds(TableSource),
    /// Class mean histograms and divergence summary; writes report/.
    Report {
        #[command(flatten)]
        input: TableSource,
        /// Also embed spots and class means with classical MDS.
        #[arg(long)]
        mds: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    /// HIST features (and the mean-intensity baseline) for every manifest image.
    Hist {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        skip_balance: bool,
    },
    /// Validate and merge externally produced tables into features.csv.
    Import {
        #[arg(long = "table", required = true)]
        tables: Vec<PathBuf>,
    },
    /// Concatenate sources per unit into a combined table.
    Combine {
        #[arg(long = "table", required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        sources: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct TableSource {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub source: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
