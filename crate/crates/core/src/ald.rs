//! Annealed Langevin dynamics over RIS configurations.
//!
//! At each noise level `σ_t` the sampler takes `K` steps
//!
//! ```text
//!   φ ← φ + (ε / 2σ_t²)·(D(φ; ψ, σ_t) − φ) + √ε·z,   z ~ N(0, I)
//! ```
//!
//! where `(D − φ)/σ_t²` stands in for the score of the smoothed surrogate
//! prior. Iterates are clamped to `[0, 1]` after every step. The optimizer
//! itself never touches a channel evaluator; [`ald_trace`] adds rate
//! readings on the diagnostic counter for reporting.

use crate::channel::{ChannelEvaluator, Configuration, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::objective::diagnostic_rate;
use crate::scorenet::Denoise;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub sigma1: f64,
    pub beta: f64,
    pub steps: usize,
    pub inner: usize,
    pub eps: f64,
    /// Use `ε·σ_t²/σ_T²` at level `t` instead of a fixed `ε`.
    pub scaled_step: bool,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(0.5, 0.9, 10, 5, 1e-2).unwrap()
    }
}

/// Geometric schedule `σ_t = σ₁·β^(t−1)`, `t = 1..=T`.
pub fn make_schedule(sigma1: f64, beta: f64, steps: usize, inner: usize, eps: f64) -> Result<NoiseSchedule> {
    if !(sigma1 > 0.0 && sigma1.is_finite()) {
        return Err(Error::InvalidSchedule(format!("sigma1 must be positive, got {sigma1}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidSchedule(format!("annealing factor must lie in (0, 1), got {beta}")));
    }
    if steps == 0 || inner == 0 {
        return Err(Error::InvalidSchedule(format!("need T >= 1 and K >= 1, got T = {steps}, K = {inner}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidSchedule(format!("step size must be positive, got {eps}")));
    }
    Ok(NoiseSchedule {
        sigma1,
        beta,
        steps,
        inner,
        eps,
        scaled_step: false,
    })
}

impl NoiseSchedule {
    pub fn with_scaled_step(mut self, on: bool) -> Self {
        self.scaled_step = on;
        self
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma1 * self.beta.powi(t as i32)
    }

    /// `σ_1, ..., σ_T`.
    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.steps).map(|t| self.sigma(t)).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.steps * self.inner
    }

    /// Step size at level index `t` (0-based).
    pub fn step_size(&self, t: usize) -> f64 {
        if self.scaled_step {
            let last = self.sigma(self.steps - 1);
            self.eps * (self.sigma(t) / last).powi(2)
        } else {
            self.eps
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AldOptions {
    /// Inject the Gaussian kick. Turning it off is a test hook.
    pub noise: bool,
}

impl Default for AldOptions {
    fn default() -> Self {
        Self { noise: true }
    }
}

fn run<D: Denoise + ?Sized>(
    theta: &D,
    psi: &EnvironmentSetting,
    schedule: &NoiseSchedule,
    phi0: &Configuration,
    rng: &mut RngState,
    options: AldOptions,
    mut visit: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<Configuration> {
    if phi0.len() != theta.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "initial configuration has {} entries, denoiser expects {}",
            phi0.len(),
            theta.n_params()
        )));
    }
    let mut phi = phi0.as_slice().to_vec();
    visit(0, &phi)?;
    let mut iteration = 0;
    for t in 0..schedule.steps {
        let sigma = schedule.sigma(t);
        let eps = schedule.step_size(t);
        let drift = eps / (2.0 * sigma * sigma);
        let kick = eps.sqrt();
        for _ in 0..schedule.inner {
            let target = theta.apply(&phi, psi, sigma)?;
            for (p, d) in phi.iter_mut().zip(&target) {
                *p += drift * (d - *p);
                if options.noise {
                    *p += kick * rng.standard_normal();
                }
                *p = p.clamp(0.0, 1.0);
            }
            iteration += 1;
            visit(iteration, &phi)?;
        }
    }
    Ok(Configuration::clamped(phi))
}

/// Run the sampler from `φ₀` and return the last iterate. Makes exactly
/// `T·K` denoiser calls and no channel calls.
pub fn ald_optimize<D: Denoise + ?Sized>(
    theta: &D,
    psi: &EnvironmentSetting,
    schedule: &NoiseSchedule,
    phi0: &Configuration,
    rng: &mut RngState,
) -> Result<Configuration> {
    ald_optimize_with(theta, psi, schedule, phi0, rng, AldOptions::default())
}

pub fn ald_optimize_with<D: Denoise + ?Sized>(
    theta: &D,
    psi: &EnvironmentSetting,
    schedule: &NoiseSchedule,
    phi0: &Configuration,
    rng: &mut RngState,
    options: AldOptions,
) -> Result<Configuration> {
    run(theta, psi, schedule, phi0, rng, options, |_, _| Ok(()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub phi: Vec<f64>,
    pub rate: f64,
}

/// Same trajectory as [`ald_optimize`] for the same seed, with the rate of
/// every iterate read on the evaluator's diagnostic counter. Returns
/// `T·K + 1` points including `φ₀`.
pub fn ald_trace<D: Denoise + ?Sized>(
    theta: &D,
    psi: &EnvironmentSetting,
    schedule: &NoiseSchedule,
    phi0: &Configuration,
    rng: &mut RngState,
    ev: &ChannelEvaluator,
    noise_var: f64,
) -> Result<Vec<TracePoint>> {
    let mut points = Vec::with_capacity(schedule.total_iterations() + 1);
    run(theta, psi, schedule, phi0, rng, AldOptions::default(), |iteration, phi| {
        points.push(TracePoint {
            iteration,
            phi: phi.to_vec(),
            rate: diagnostic_rate(ev, phi, psi, noise_var)?,
        });
        Ok(())
    })?;
    Ok(points)
}

/// Extension, not part of the sampler proper: the highest-rate iterate of a
/// trace. Picking it needs the rate of every iterate, so it gives up
/// zero-call inference.
pub fn best_of_trace(trace: &[TracePoint]) -> Option<&TracePoint> {
    trace.iter().max_by(|a, b| a.rate.total_cmp(&b.rate))
}
