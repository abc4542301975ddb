//! Reference optimizers: zero-order ascent, random search and gradient
//! ascent with simulator access.
//!
//! Every method reports its per-iteration rate trace on the diagnostic
//! counter, so the counted calls are exactly the ones the method needs to
//! decide where to go next.

use crate::channel::{ChannelEvaluator, Configuration, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::objective::{diagnostic_rate, rate, zero_order_gradient};

/// Final configuration and the rate of every iterate, starting with `φ₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub phi: Configuration,
    pub trace: Vec<f64>,
}

impl Run {
    pub fn final_rate(&self) -> f64 {
        *self.trace.last().unwrap()
    }
}

fn clamp_step(phi: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in phi.iter_mut().zip(grad) {
        *p = (*p + lr * g).clamp(0.0, 1.0);
    }
}

/// Projected ascent `φ ← clamp(φ + lr·g(φ))` with a caller-supplied gradient;
/// `score` rates each iterate for the trace.
pub fn projected_ascent(
    phi0: &Configuration,
    steps: usize,
    lr: f64,
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut score: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Run> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let mut phi = phi0.as_slice().to_vec();
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(score(&phi)?);
    for _ in 0..steps {
        let g = grad(&phi)?;
        clamp_step(&mut phi, &g, lr);
        trace.push(score(&phi)?);
    }
    Ok(Run {
        phi: Configuration::clamped(phi),
        trace,
    })
}

/// Inference-time zero-order ascent: `steps·2m` counted channel calls.
#[allow(clippy::too_many_arguments)]
pub fn zogd_optimize(
    ev: &ChannelEvaluator,
    psi: &EnvironmentSetting,
    phi0: &Configuration,
    steps: usize,
    m: usize,
    probe_radius: f64,
    lr: f64,
    noise_var: f64,
    rng: &mut RngState,
) -> Result<Run> {
    projected_ascent(
        phi0,
        steps,
        lr,
        |phi| zero_order_gradient(|p| rate(ev, p, psi, noise_var), phi, m, probe_radius, rng),
        |phi| diagnostic_rate(ev, phi, psi, noise_var),
    )
}

/// Best of `n` uniform draws; `n` counted calls. The trace is the best rate
/// so far after each draw.
pub fn random_search(
    ev: &ChannelEvaluator,
    psi: &EnvironmentSetting,
    n: usize,
    noise_var: f64,
    rng: &mut RngState,
) -> Result<Run> {
    if n == 0 {
        return Err(Error::InvalidArgument("random search needs at least one draw".into()));
    }
    let n_p = ev.n_params();
    let mut best: Option<(Configuration, f64)> = None;
    let mut trace = Vec::with_capacity(n);
    for _ in 0..n {
        let phi = Configuration::random(n_p, rng);
        let r = rate(ev, phi.as_slice(), psi, noise_var)?;
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((phi, r));
        }
        trace.push(best.as_ref().unwrap().1);
    }
    Ok(Run {
        phi: best.unwrap().0,
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulatorOptions {
    /// Central-difference half step.
    pub fd_step: f64,
    /// Halve the step (up to this many times) while the model rate drops.
    pub max_backtracks: usize,
}

impl Default for SimulatorOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            max_backtracks: 8,
        }
    }
}

/// Full-coordinate central finite-difference gradient of the rate under
/// `ev`. Probes stay inside `[0, 1]`; the quotient uses the actual spacing.
pub fn finite_difference_gradient(
    ev: &ChannelEvaluator,
    psi: &EnvironmentSetting,
    phi: &[f64],
    h: f64,
    noise_var: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; phi.len()];
    let mut probe = phi.to_vec();
    for i in 0..phi.len() {
        let hi = (phi[i] + h).min(1.0);
        let lo = (phi[i] - h).max(0.0);
        probe[i] = hi;
        let up = rate(ev, &probe, psi, noise_var)?;
        probe[i] = lo;
        let dn = rate(ev, &probe, psi, noise_var)?;
        probe[i] = phi[i];
        grad[i] = (up - dn) / (hi - lo);
    }
    Ok(grad)
}

/// Gradient ascent with model access: gradients come from `ev_model`
/// (`2N_p` calls per step plus backtracking probes), iterates are scored on
/// `ev_truth`.
#[allow(clippy::too_many_arguments)]
pub fn simulator_gradient_ascent(
    ev_truth: &ChannelEvaluator,
    ev_model: &ChannelEvaluator,
    psi: &EnvironmentSetting,
    phi0: &Configuration,
    steps: usize,
    lr: f64,
    noise_var: f64,
    options: SimulatorOptions,
) -> Result<Run> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let mut phi = phi0.as_slice().to_vec();
    let mut current = rate(ev_model, &phi, psi, noise_var)?;
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(diagnostic_rate(ev_truth, &phi, psi, noise_var)?);
    for _ in 0..steps {
        let g = finite_difference_gradient(ev_model, psi, &phi, options.fd_step, noise_var)?;
        let mut step = lr;
        for attempt in 0..=options.max_backtracks {
            let mut cand = phi.clone();
            clamp_step(&mut cand, &g, step);
            let r = rate(ev_model, &cand, psi, noise_var)?;
            if r >= current {
                phi = cand;
                current = r;
                break;
            }
            if attempt == options.max_backtracks {
                break;
            }
            step *= 0.5;
        }
        trace.push(diagnostic_rate(ev_truth, &phi, psi, noise_var)?);
    }
    Ok(Run {
        phi: Configuration::clamped(phi),
        trace,
    })
}
