//! `simclust`: runs the clustered-training pipeline one stage at a time, with
//! every intermediate result written to a file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use simclust_core::{AggregateMode, HeadKind};

use crate::config::Settings;

#[derive(Parser, Debug)]
#[command(
    name = "simclust",
    version,
    about = "Similarity-based clustered training pipeline"
)]
struct Cli {
    /// Optional JSON config with `threads`, `aggregate_mode`, `head_kind`
    /// and `train`. Flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads. Falls back to the config file, then SIMCLUST_THREADS,
    /// then the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// How class similarities are combined into a cluster score.
    #[arg(long, global = true, value_name = "mean|sum")]
    mode: Option<AggregateMode>,

    /// Classifier head trained per cluster.
    #[arg(long, global = true, value_name = "nearest_centroid|linear")]
    head_kind: Option<HeadKind>,

    #[command(flatten)]
    train: TrainFlags,

    /// Log more to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Linear head training overrides.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// Gradient descent epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long, global = true)]
    lr0: Option<f64>,
    /// Epochs between learning rate decays.
    #[arg(long, global = true)]
    step_size: Option<usize>,
    /// Learning rate decay factor.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// L2 penalty on the weights.
    #[arg(long, global = true)]
    l2: Option<f64>,
    /// Seed recorded in trained heads.
    #[arg(long, global = true)]
    train_seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Class centroids and their pairwise cosine distance matrix.
    Simmat {
        /// Store manifest.
        #[arg(long)]
        store: PathBuf,
        /// Output matrix CSV.
        #[arg(long)]
        out: PathBuf,
        /// Output centroid FVEC, one row per class in store order.
        #[arg(long)]
        centroids: PathBuf,
    },
    /// Ward clustering of the similarity matrix into k clusters.
    Split {
        /// Matrix CSV written by `simmat`.
        #[arg(long)]
        simmat: PathBuf,
        /// Number of clusters.
        #[arg(short, long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        /// Output split JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains classifier heads for a split.
    Train {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Directory receiving `cluster_<N>.json` or `monolithic.json`.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        target: TrainTarget,
    },
    /// Picks a cluster for every query vector.
    Route {
        /// Query FVEC.
        #[arg(long)]
        query: PathBuf,
        /// Centroid FVEC written by `simmat`.
        #[arg(long)]
        centroids: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Output decision JSON, one entry per query.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classifies every query vector; prints one class per line.
    Predict {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        centroids: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Directory of head files written by `train --all`.
        #[arg(long)]
        heads: PathBuf,
        /// Also write predictions as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out comparison of clustered and monolithic heads.
    Eval {
        #[arg(long)]
        store: PathBuf,
        /// Precomputed split; the store is clustered from scratch otherwise.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Cluster count when no split is given.
        #[arg(short, long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        /// Share of each class held out for testing.
        #[arg(long, default_value_t = 0.25)]
        test_fraction: f64,
        /// Seed of the train/test split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates a synthetic store with known super-cluster structure.
    Synth {
        /// Generator parameters as JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the store and `ground_truth.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Adds one class and retrains only the cluster it joins.
    Extend {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Directory of head files written by `train --all`.
        #[arg(long)]
        heads: PathBuf,
        /// Vectors of the new class.
        #[arg(long)]
        new_class: PathBuf,
        /// Name of the new class (defaults to the file stem).
        #[arg(long)]
        name: Option<String>,
        /// Output directory for the updated store, split, matrix and heads.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct TrainTarget {
    /// Train the head of one cluster.
    #[arg(long)]
    cluster: Option<usize>,
    /// Train one head over every class.
    #[arg(long)]
    monolithic: bool,
    /// Train every cluster head.
    #[arg(long)]
    all: bool,
}

/// Usage line of the named subcommand, or of the whole program.
fn usage_for(subcommand: Option<&str>) -> clap::builder::StyledStr {
    let mut root = Cli::command();
    root.build();
    match subcommand.and_then(|name| root.find_subcommand_mut(name)) {
        Some(sub) => sub.render_usage(),
        None => root.render_usage(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
            }
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let result = Settings::resolve(&cli).and_then(|settings| {
        settings.install_thread_pool()?;
        commands::run(cli.command, &settings)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
