//! Command-line front end: `train`, `optimize`, `sweep-snr`, `trace`,
//! `latency` and `heatmap`.
//!
//! Exit codes: 0 on success, 2 for configuration and input errors, 3 for
//! numerical failures.

mod commands;
mod config;
mod experiment;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_heatmap, cmd_latency, cmd_optimize, cmd_sweep_snr, cmd_trace, cmd_train, heatmap_for_seed, load_theta_for,
    mean, rate_heatmap, HeatmapGrid, HeatmapResult, LatencyRow, TrainSummary, CHECKPOINT_FILE, LATENCY_FILE,
    OPTIMIZE_FILE, SWEEP_FILE, TRACE_FILE, TRAIN_LOG_FILE,
};
pub use config::{ExperimentConfig, HeatmapConfig, Method, SceneSource};
pub use experiment::{Experiment, MethodRun, TrainResult};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ris-ald", version, about = "Learned Langevin optimization of RIS-programmable channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config file (`key = value`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Scene file, overriding the config's `scene`.
    #[arg(long, global = true)]
    pub scene: Option<PathBuf>,

    /// Denoiser checkpoint (default: `<out>/checkpoint.bin`).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,

    /// Training seed for `train`; single evaluation seed otherwise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory, overriding the config's `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Train the denoiser and write a checkpoint plus training log.
    Train,
    /// Run every configured method once per seed.
    Optimize,
    /// Final rate and call count per method, SNR and seed.
    SweepSnr,
    /// Rate per iteration per method and seed.
    Trace,
    /// Channel calls and wall-clock time over the batch of settings.
    Latency,
    /// Spatial rate maps before and after optimization.
    Heatmap,
}

impl Cli {
    /// Resolve the config file and command-line overrides.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scene {
            if !s.exists() {
                return Err(Error::io(s, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
            cfg.scene = SceneSource::File(s.clone());
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(seed) = self.seed {
            if self.command == Command::Train {
                cfg.train_seed = seed;
            } else {
                cfg.seeds = vec![seed];
            }
        }
        Ok(cfg)
    }

    pub fn checkpoint_path(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE))
    }
}

/// Execute a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.experiment_config()?;
    let ckpt = cli.checkpoint_path(&cfg);
    match cli.command {
        Command::Train => cmd_train(&cfg).map(drop),
        Command::Optimize => cmd_optimize(&cfg, &ckpt).map(drop),
        Command::SweepSnr => cmd_sweep_snr(&cfg, &ckpt).map(drop),
        Command::Trace => cmd_trace(&cfg, &ckpt).map(drop),
        Command::Latency => cmd_latency(&cfg, &ckpt).map(drop),
        Command::Heatmap => cmd_heatmap(&cfg, &ckpt).map(drop),
    }
}

/// Process exit code for a command result.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_config_error() => 2,
        Err(_) => 3,
    }
}
