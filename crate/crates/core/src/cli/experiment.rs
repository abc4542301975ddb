//! Shared experiment context: scene, measured world, simulator model and the
//! per-seed runs of every method.

use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use crate::ald::ald_trace;
use crate::baselines::{random_search, simulator_gradient_ascent, zogd_optimize, Run};
use crate::channel::{place, ChannelEvaluator, Configuration, Environment, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::objective::diagnostic_rate;
use crate::scorenet::{init_denoiser, DenoiserParams};
use crate::training::{held_out_batch, held_out_rate, train, TrainLogRow};

/// Transmitters closer than this are redrawn when sampling settings.
const MIN_TX_GAP_M: f64 = 0.05;

// Stream ids keep the random draws of different purposes independent.
const STREAM_INIT: u64 = 1;
const STREAM_METHOD: u64 = 2;
const STREAM_OVERLAY: u64 = 3;
const STREAM_THETA: u64 = 4;
const STREAM_TRAIN: u64 = 5;
const STREAM_HELDOUT: u64 = 6;
const STREAM_SETTINGS: u64 = 7;

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub env: Arc<Environment>,
    /// Measured channel: the simulator with a frozen mismatch overlay.
    pub world: ChannelEvaluator,
    /// The noise-free simulator.
    pub model: ChannelEvaluator,
    pub settings: Vec<EnvironmentSetting>,
}

/// Outcome of one method on one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub noise_var: f64,
    pub phi: Configuration,
    /// Final rate on the measured world.
    pub rate: f64,
    /// Counted channel calls spent by the method.
    pub calls: u64,
    /// Rate per iteration on the measured world.
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub theta: DenoiserParams,
    pub log: Vec<TrainLogRow>,
    pub heldout_before: f64,
    pub heldout_after: f64,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Arc::new(cfg.scene.load()?);
        let level = cfg.overlay.unwrap_or(env.noise_overlay);
        let mut overlay_rng = RngState::with_stream(cfg.overlay_seed, STREAM_OVERLAY);
        let world = ChannelEvaluator::with_overlay(env.clone(), level, &mut overlay_rng);
        let model = ChannelEvaluator::new(env.clone());
        let settings = draw_settings(&env, cfg.settings, cfg.settings_seed)?;
        Ok(Self {
            cfg,
            env,
            world,
            model,
            settings,
        })
    }

    pub fn n_p(&self) -> usize {
        self.env.n_p
    }

    pub fn setting_for_seed(&self, seed: u64) -> &EnvironmentSetting {
        &self.settings[(seed % self.settings.len() as u64) as usize]
    }

    pub fn initial_configuration(&self, seed: u64) -> Configuration {
        Configuration::random(self.n_p(), &mut RngState::with_stream(seed, STREAM_INIT))
    }

    pub fn initial_theta(&self) -> Result<DenoiserParams> {
        let mut rng = RngState::with_stream(self.cfg.train_seed, STREAM_THETA);
        init_denoiser(self.n_p(), self.env.setting_dim(), &self.cfg.hidden, &mut rng)
    }

    /// Train on the experiment's settings against the measured world.
    pub fn train(&self) -> Result<TrainResult> {
        let theta0 = self.initial_theta()?;
        let ev = self.world.fork();
        let mut rng = RngState::with_stream(self.cfg.train_seed, STREAM_HELDOUT);
        let batch = held_out_batch(
            &self.settings,
            self.cfg.heldout_per_setting,
            self.cfg.train.sigma_init,
            self.n_p(),
            &mut rng,
        );
        let noise_var = self.cfg.train.noise_var;
        let heldout_before = held_out_rate(&theta0, &batch, &ev, noise_var)?;
        let out = train(
            theta0,
            &self.settings,
            &ev,
            &self.cfg.train,
            RngState::with_stream(self.cfg.train_seed, STREAM_TRAIN),
        )?;
        let heldout_after = held_out_rate(&out.theta, &batch, &ev, noise_var)?;
        Ok(TrainResult {
            theta: out.theta,
            log: out.log,
            heldout_before,
            heldout_after,
        })
    }

    /// Run `method` for `seed` at noise variance `noise_var`.
    pub fn run_method(
        &self,
        method: Method,
        seed: u64,
        noise_var: f64,
        theta: Option<&DenoiserParams>,
    ) -> Result<MethodRun> {
        let psi = self.setting_for_seed(seed);
        let phi0 = self.initial_configuration(seed);
        let mut rng = RngState::with_stream(seed, STREAM_METHOD);
        let world = self.world.fork();
        let cfg = &self.cfg;
        let (run, calls) = match method {
            Method::Ald => {
                let theta = theta.ok_or_else(|| Error::Config("the ald method needs a trained checkpoint".into()))?;
                let points = ald_trace(theta, psi, &cfg.schedule, &phi0, &mut rng, &world, noise_var)?;
                let phi = Configuration::clamped(points.last().unwrap().phi.clone());
                let trace = points.iter().map(|p| p.rate).collect();
                (Run { phi, trace }, world.call_count())
            }
            Method::Zogd => {
                let run = zogd_optimize(
                    &world,
                    psi,
                    &phi0,
                    cfg.iterations,
                    cfg.zogd_m,
                    cfg.zogd_radius,
                    cfg.zogd_lr,
                    noise_var,
                    &mut rng,
                )?;
                (run, world.call_count())
            }
            Method::Random => {
                let run = random_search(&world, psi, cfg.random_samples, noise_var, &mut rng)?;
                (run, world.call_count())
            }
            Method::SimPerfect | Method::SimImperfect => {
                let model = if method == Method::SimPerfect {
                    self.world.fork()
                } else {
                    self.model.fork()
                };
                let run =
                    simulator_gradient_ascent(&world, &model, psi, &phi0, cfg.iterations, cfg.sim_lr, noise_var, cfg.sim)?;
                (run, model.call_count())
            }
        };
        let rate = diagnostic_rate(&world, run.phi.as_slice(), psi, noise_var)?;
        Ok(MethodRun {
            method,
            seed,
            noise_var,
            phi: run.phi,
            rate,
            calls,
            trace: run.trace,
        })
    }

    /// Every `(method, seed, snr)` job, in that nesting order, computed in
    /// parallel.
    pub fn run_grid(
        &self,
        methods: &[Method],
        seeds: &[u64],
        snrs: &[f64],
        theta: Option<&DenoiserParams>,
    ) -> Result<Vec<MethodRun>> {
        let jobs: Vec<(Method, u64, f64)> = methods
            .iter()
            .flat_map(|&m| seeds.iter().flat_map(move |&s| snrs.iter().map(move |&r| (m, s, r))))
            .collect();
        jobs.par_iter()
            .map(|&(m, s, snr)| self.run_method(m, s, 1.0 / snr, theta))
            .collect()
    }
}

fn draw_settings(env: &Environment, count: usize, seed: u64) -> Result<Vec<EnvironmentSetting>> {
    let mut rng = RngState::with_stream(seed, STREAM_SETTINGS);
    let phi = vec![0.5; env.n_p];
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count {
            return Err(Error::InvalidScene("cannot place transmitters apart inside the box".into()));
        }
        let psi = EnvironmentSetting::random(env.setting_dim(), &mut rng);
        let placed = place(env, &phi, &psi)?;
        let tx: Vec<[f64; 2]> = env.tx_indices().iter().map(|&i| placed[i].pos).collect();
        let clear = tx.iter().enumerate().all(|(i, a)| {
            tx[i + 1..]
                .iter()
                .all(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() >= MIN_TX_GAP_M)
        });
        if clear {
            out.push(psi);
        }
    }
    Ok(out)
}
