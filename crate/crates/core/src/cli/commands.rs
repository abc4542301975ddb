//! The experiment commands and their output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::experiment::{Experiment, MethodRun};
use crate::channel::{ChannelEvaluator, Configuration, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::objective::diagnostic_rate;
use crate::scorenet::{load_checkpoint, save_checkpoint, DenoiserParams};
use crate::training::write_train_log;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SWEEP_FILE: &str = "sweep_snr.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const LATENCY_FILE: &str = "latency.csv";
pub const OPTIMIZE_FILE: &str = "optimize.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn table(cfg: &ExperimentConfig, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = cfg.header_comment();
    s.push('\n');
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Exact, locale-free float formatting for CSV cells.
fn num(x: f64) -> String {
    format!("{x:.17e}")
}

fn needs_theta(methods: &[Method]) -> bool {
    methods.contains(&Method::Ald)
}

/// Load the checkpoint when the method set includes the learned optimizer.
pub fn load_theta_for(exp: &Experiment, methods: &[Method], checkpoint: &Path) -> Result<Option<DenoiserParams>> {
    if !needs_theta(methods) {
        return Ok(None);
    }
    let theta = load_checkpoint(checkpoint)?;
    if theta.n_p() != exp.n_p() || theta.dim_psi() != exp.env.setting_dim() {
        return Err(Error::DimMismatchOnLoad(format!(
            "checkpoint is for N_p = {}, dim ψ = {}; scene has {} and {}",
            theta.n_p(),
            theta.dim_psi(),
            exp.n_p(),
            exp.env.setting_dim()
        )));
    }
    Ok(Some(theta))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub heldout_before: f64,
    pub heldout_after: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let exp = Experiment::new(cfg.clone())?;
    create_dir(&cfg.out_dir)?;
    let result = exp.train()?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    let log = cfg.out_dir.join(TRAIN_LOG_FILE);
    save_checkpoint(&result.theta, &checkpoint)?;
    write_train_log(&result.log, &cfg.header_comment(), &log)?;
    println!(
        "held-out mean rate: {:.6} -> {:.6} bits/channel use",
        result.heldout_before, result.heldout_after
    );
    Ok(TrainSummary {
        checkpoint,
        log,
        heldout_before: result.heldout_before,
        heldout_after: result.heldout_after,
    })
}

pub fn cmd_optimize(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<MethodRun>> {
    let exp = Experiment::new(cfg.clone())?;
    let theta = load_theta_for(&exp, &cfg.methods, checkpoint)?;
    let snr = 1.0 / cfg.train.noise_var;
    let runs = exp.run_grid(&cfg.methods, &cfg.seeds, &[snr], theta.as_ref())?;
    create_dir(&cfg.out_dir)?;
    let rows = runs.iter().map(|r| {
        let phi: Vec<String> = r.phi.as_slice().iter().map(|p| format!("{p:.6}")).collect();
        format!("{},{},{},{},{}", r.method, r.seed, num(r.rate), r.calls, phi.join(" "))
    });
    write_text(&cfg.out_dir.join(OPTIMIZE_FILE), &table(cfg, "method,seed,rate,calls,phi", rows))?;
    for r in &runs {
        println!("{:<14} seed {:>4}  rate {:.6}  calls {}", r.method.name(), r.seed, r.rate, r.calls);
    }
    Ok(runs)
}

pub fn cmd_sweep_snr(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<MethodRun>> {
    let exp = Experiment::new(cfg.clone())?;
    let theta = load_theta_for(&exp, &cfg.methods, checkpoint)?;
    let runs = exp.run_grid(&cfg.methods, &cfg.seeds, &cfg.snrs, theta.as_ref())?;
    create_dir(&cfg.out_dir)?;
    let rows = runs
        .iter()
        .map(|r| format!("{},{},{},{},{}", r.method, num(1.0 / r.noise_var), r.seed, num(r.rate), r.calls));
    write_text(&cfg.out_dir.join(SWEEP_FILE), &table(cfg, "method,snr,seed,rate,calls", rows))?;
    for &m in &cfg.methods {
        for &snr in &cfg.snrs {
            let rates: Vec<f64> = runs
                .iter()
                .filter(|r| r.method == m && (1.0 / r.noise_var - snr).abs() < 1e-12 * snr)
                .map(|r| r.rate)
                .collect();
            println!("{:<14} snr {:>8.3}  mean rate {:.6}", m.name(), snr, mean(&rates));
        }
    }
    Ok(runs)
}

/// Rows `(method, iteration, seed, rate)`. Random search reports its best
/// rate after each draw, starting at iteration 1.
pub fn cmd_trace(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<MethodRun>> {
    let exp = Experiment::new(cfg.clone())?;
    let theta = load_theta_for(&exp, &cfg.methods, checkpoint)?;
    let snr = 1.0 / cfg.train.noise_var;
    let runs = exp.run_grid(&cfg.methods, &cfg.seeds, &[snr], theta.as_ref())?;
    create_dir(&cfg.out_dir)?;
    let mut rows = Vec::new();
    for r in &runs {
        let first = if r.method == Method::Random { 1 } else { 0 };
        for (i, rate) in r.trace.iter().enumerate() {
            rows.push(format!("{},{},{},{}", r.method, i + first, r.seed, num(*rate)));
        }
    }
    write_text(&cfg.out_dir.join(TRACE_FILE), &table(cfg, "method,iter,seed,rate", rows))?;
    for &m in &cfg.methods {
        let finals: Vec<f64> = runs.iter().filter(|r| r.method == m).map(|r| *r.trace.last().unwrap()).collect();
        println!("{:<14} final mean rate {:.6}", m.name(), mean(&finals));
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub method: Method,
    pub calls_per_setting: f64,
    pub total_calls: u64,
    pub wall_seconds: f64,
    pub mean_rate: f64,
}

/// Call counts and wall-clock time per method over the batch of settings.
/// Seeds `0..settings` map one-to-one onto the settings.
pub fn cmd_latency(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<LatencyRow>> {
    let exp = Experiment::new(cfg.clone())?;
    let theta = load_theta_for(&exp, &cfg.methods, checkpoint)?;
    let noise_var = cfg.train.noise_var;
    let seeds: Vec<u64> = (0..exp.settings.len() as u64).collect();
    let mut rows = Vec::new();
    for &m in &cfg.methods {
        let start = Instant::now();
        let runs: Vec<MethodRun> = seeds
            .iter()
            .map(|&s| exp.run_method(m, s, noise_var, theta.as_ref()))
            .collect::<Result<_>>()?;
        let wall_seconds = start.elapsed().as_secs_f64();
        let total_calls: u64 = runs.iter().map(|r| r.calls).sum();
        rows.push(LatencyRow {
            method: m,
            calls_per_setting: total_calls as f64 / runs.len() as f64,
            total_calls,
            wall_seconds,
            mean_rate: mean(&runs.iter().map(|r| r.rate).collect::<Vec<_>>()),
        });
    }
    create_dir(&cfg.out_dir)?;
    let lines = rows.iter().map(|r| {
        format!(
            "{},{},{},{:.6},{}",
            r.method,
            r.calls_per_setting,
            r.total_calls,
            r.wall_seconds,
            num(r.mean_rate)
        )
    });
    let mut run_cfg = cfg.clone();
    run_cfg.seeds = seeds;
    write_text(
        &cfg.out_dir.join(LATENCY_FILE),
        &table(&run_cfg, "method,calls_per_setting,total_calls,wall_seconds,mean_rate", lines),
    )?;
    println!("{:<14} {:>12} {:>10} {:>10}", "method", "calls/set", "seconds", "rate");
    for r in &rows {
        println!(
            "{:<14} {:>12.1} {:>10.3} {:>10.6}",
            r.method.name(),
            r.calls_per_setting,
            r.wall_seconds,
            r.mean_rate
        );
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `ny` rows of `nx` values; row 0 is the lowest `y`.
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let dx = (self.x_range.1 - self.x_range.0) / self.nx as f64;
        let dy = (self.y_range.1 - self.y_range.0) / self.ny as f64;
        [
            self.x_range.0 + (ix as f64 + 0.5) * dx,
            self.y_range.0 + (iy as f64 + 0.5) * dy,
        ]
    }

    pub fn difference(&self, other: &HeatmapGrid) -> HeatmapGrid {
        HeatmapGrid {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            ..other.clone()
        }
    }

    fn to_text(&self, header: &str) -> String {
        let mut s = format!(
            "{header}\n# x={},{} y={},{} nx={} ny={}\n",
            self.x_range.0, self.x_range.1, self.y_range.0, self.y_range.1, self.nx, self.ny
        );
        for row in self.values.chunks(self.nx) {
            let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }

    /// Plain (ASCII) portable graymap, top row = highest `y`.
    fn to_pgm(&self, header: &str) -> String {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut s = format!("P2\n{header}\n{} {}\n255\n", self.nx, self.ny);
        for row in self.values.chunks(self.nx).rev() {
            let px: Vec<String> = row
                .iter()
                .map(|v| (((v - lo) / span) * 255.0).round().to_string())
                .collect();
            let _ = writeln!(s, "{}", px.join(" "));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct HeatmapResult {
    pub reference: HeatmapGrid,
    pub optimized: HeatmapGrid,
    pub difference: HeatmapGrid,
    pub phi: Configuration,
    /// Mean of the difference over cells near a real receiver.
    pub receiver_mean_difference: f64,
    pub receiver_cells: usize,
}

/// Rate map with a single probe receiver swept over the grid, on the
/// simulator.
pub fn rate_heatmap(exp: &Experiment, phi: &[f64], psi: &EnvironmentSetting, noise_var: f64) -> Result<HeatmapGrid> {
    let h = &exp.cfg.heatmap;
    let mut grid = HeatmapGrid {
        x_range: h.x_range,
        y_range: h.y_range,
        nx: h.nx,
        ny: h.ny,
        values: Vec::new(),
    };
    let cells: Vec<(usize, usize)> = (0..h.ny).flat_map(|iy| (0..h.nx).map(move |ix| (ix, iy))).collect();
    grid.values = cells
        .par_iter()
        .map(|&(ix, iy)| {
            let env = exp.env.with_probe_receiver(grid.cell_center(ix, iy))?;
            let ev = ChannelEvaluator::new(std::sync::Arc::new(env));
            diagnostic_rate(&ev, phi, psi, noise_var)
        })
        .collect::<Result<_>>()?;
    Ok(grid)
}

/// Reference (all 0.5), optimized and difference maps for one seed.
pub fn heatmap_for_seed(exp: &Experiment, theta: Option<&DenoiserParams>, seed: u64) -> Result<HeatmapResult> {
    let noise_var = exp.cfg.train.noise_var;
    let psi = exp.setting_for_seed(seed);
    let run = exp.run_method(exp.cfg.heatmap.method, seed, noise_var, theta)?;
    let reference = rate_heatmap(exp, &vec![0.5; exp.n_p()], psi, noise_var)?;
    let optimized = rate_heatmap(exp, run.phi.as_slice(), psi, noise_var)?;
    let difference = optimized.difference(&reference);

    let rx: Vec<[f64; 2]> = exp.env.rx_indices().iter().map(|&i| exp.env.dipoles[i].pos).collect();
    let radius = exp.cfg.heatmap.rx_radius;
    let mut sum = 0.0;
    let mut count = 0;
    for iy in 0..difference.ny {
        for ix in 0..difference.nx {
            let c = difference.cell_center(ix, iy);
            if rx.iter().any(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() <= radius) {
                sum += difference.values[iy * difference.nx + ix];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Config("no heatmap cell lies within heatmap_rx_radius of a receiver".into()));
    }
    Ok(HeatmapResult {
        reference,
        optimized,
        difference,
        phi: run.phi,
        receiver_mean_difference: sum / count as f64,
        receiver_cells: count,
    })
}

pub fn cmd_heatmap(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<HeatmapResult> {
    let exp = Experiment::new(cfg.clone())?;
    let theta = load_theta_for(&exp, &[cfg.heatmap.method], checkpoint)?;
    let seed = cfg.seeds[0];
    let result = heatmap_for_seed(&exp, theta.as_ref(), seed)?;
    create_dir(&cfg.out_dir)?;
    let header = cfg.header_comment();
    for (name, grid) in [
        ("reference", &result.reference),
        ("optimized", &result.optimized),
        ("difference", &result.difference),
    ] {
        write_text(&cfg.out_dir.join(format!("heatmap_{name}.txt")), &grid.to_text(&header))?;
        write_text(&cfg.out_dir.join(format!("heatmap_{name}.pgm")), &grid.to_pgm(&header))?;
    }
    println!(
        "receiver-region mean rate difference: {:.6} over {} cells (seed {seed})",
        result.receiver_mean_difference, result.receiver_cells
    );
    Ok(result)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
