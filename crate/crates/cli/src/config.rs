use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;
use simclust_core::{AggregateMode, HeadKind, TrainConfig};

use crate::commands::{require, Stage};
use crate::Cli;

pub const THREADS_ENV: &str = "SIMCLUST_THREADS";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CliConfig {
    threads: Option<usize>,
    aggregate_mode: Option<AggregateMode>,
    head_kind: Option<HeadKind>,
    train: TrainConfig,
}

/// Effective settings after merging flags, config file and environment.
#[derive(Debug, Clone)]
pub struct Settings {
    pub threads: usize,
    pub mode: AggregateMode,
    pub head_kind: HeadKind,
    pub train: TrainConfig,
}

fn load_config(path: &Path) -> anyhow::Result<CliConfig> {
    require(path, "config file", Stage::User)?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        simclust_core::Error::Validation(format!("config {}: {e}", path.display())).into()
    })
}

impl Settings {
    pub fn resolve(cli: &Cli) -> anyhow::Result<Self> {
        let file = match &cli.config {
            Some(path) => load_config(path)?,
            None => CliConfig::default(),
        };
        let env_threads = match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                simclust_core::Error::Validation(format!(
                    "{THREADS_ENV}={v:?} is not a thread count"
                ))
            })?),
            Err(_) => None,
        };
        let threads = cli
            .threads
            .or(file.threads)
            .or(env_threads)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
        if threads == 0 {
            bail!(simclust_core::Error::Validation(
                "threads must be at least 1".into()
            ));
        }

        let mut train = file.train;
        let t = &cli.train;
        if let Some(v) = t.epochs {
            train.epochs = v;
        }
        if let Some(v) = t.lr0 {
            train.lr0 = v;
        }
        if let Some(v) = t.step_size {
            train.step_size = v;
        }
        if let Some(v) = t.gamma {
            train.gamma = v;
        }
        if let Some(v) = t.l2 {
            train.l2 = v;
        }
        if let Some(v) = t.train_seed {
            train.seed = v;
        }
        train.validate()?;

        Ok(Self {
            threads,
            mode: cli.mode.or(file.aggregate_mode).unwrap_or_default(),
            head_kind: cli.head_kind.or(file.head_kind).unwrap_or_default(),
            train,
        })
    }

    pub fn install_thread_pool(&self) -> anyhow::Result<()> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build_global()
            .context("starting worker threads")?;
        log::debug!("using {} worker threads", self.threads);
        Ok(())
    }
}
