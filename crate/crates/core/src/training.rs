//! Active-learning training of the denoiser.
//!
//! Each sample `(φ, ψ, σ)` is pushed through the network, the rate of the
//! output `φ̂` is differentiated by the two-point zero-order estimator, and the
//! per-sample loss
//!
//! ```text
//!   λ/σ²·‖φ − φ̂‖² − F(M_ψ(φ̂))
//! ```
//!
//! is backpropagated into `θ`. After the batch-mean update every sample is
//! replaced by its output and its `σ` shrinks by `β`; with some probability
//! the whole dataset is instead re-randomized at `σ_init`.

use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::channel::{ChannelEvaluator, Configuration, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::objective::{diagnostic_rate, rate, zero_order_gradient, DEFAULT_PROBE_RADIUS};
use crate::scorenet::{backward, denoise, DenoiserParams, Optimizer, OptimizerKind};

/// When the dataset is re-randomized, given `v ~ U[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetRule {
    /// Reset when `v > γ` (probability `1 − γ`).
    Alg2Literal,
    /// Reset when `v < γ` (probability `γ`).
    TextSemantics,
}

impl ResetRule {
    pub fn fires(self, v: f64, gamma: f64) -> bool {
        match self {
            Self::Alg2Literal => v > gamma,
            Self::TextSemantics => v < gamma,
        }
    }
}

impl FromStr for ResetRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alg2_literal" | "literal" => Ok(Self::Alg2Literal),
            "text_semantics" | "text" => Ok(Self::TextSemantics),
            other => Err(format!("unknown reset rule `{other}`")),
        }
    }
}

impl std::fmt::Display for ResetRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Alg2Literal => "alg2_literal",
            Self::TextSemantics => "text_semantics",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub iterations: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Direction count of the zero-order estimator (`2m` calls per sample).
    pub m: usize,
    pub probe_radius: f64,
    pub batch_size: usize,
    pub sigma_init: f64,
    pub reset_rule: ResetRule,
    pub optimizer: OptimizerKind,
    /// `σ_w²` used for every rate evaluation.
    pub noise_var: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lr: 5e-4,
            iterations: 180,
            beta: 0.9,
            gamma: 0.25,
            m: 4,
            probe_radius: DEFAULT_PROBE_RADIUS,
            batch_size: 8,
            sigma_init: 0.5,
            reset_rule: ResetRule::Alg2Literal,
            optimizer: OptimizerKind::Sgd,
            noise_var: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.lr));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.probe_radius > 0.0) {
            return bad(format!("probe radius must be positive, got {}", self.probe_radius));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.sigma_init > 0.0) {
            return bad(format!("sigma_init must be positive, got {}", self.sigma_init));
        }
        if !(self.noise_var > 0.0) {
            return bad(format!("noise variance must be positive, got {}", self.noise_var));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub phi: Vec<f64>,
    pub psi: EnvironmentSetting,
    pub sigma: f64,
}

/// `(1/|D|)·Σ [λ/σ²·‖φ − φ̂‖² − F(M_ψ(φ̂))]`, one counted channel call per
/// sample.
pub fn map_loss(
    theta: &DenoiserParams,
    batch: &[TrainSample],
    lambda: f64,
    ev: &ChannelEvaluator,
    noise_var: f64,
) -> Result<f64> {
    map_loss_with(theta, batch, lambda, |phi, psi| rate(ev, phi, psi, noise_var))
}

/// [`map_loss`] with an arbitrary figure of merit.
pub fn map_loss_with(
    theta: &DenoiserParams,
    batch: &[TrainSample],
    lambda: f64,
    mut merit: impl FnMut(&[f64], &EnvironmentSetting) -> Result<f64>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        let (phi_hat, _) = denoise(theta, &s.phi, &s.psi, s.sigma)?;
        total += lambda / (s.sigma * s.sigma) * dist2(&s.phi, &phi_hat) - merit(&phi_hat, &s.psi)?;
    }
    Ok(total / batch.len() as f64)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Upstream gradient at the network output: `(2λ/σ²)·(φ̂ − φ) − ĝ_F`.
pub fn loss_output_gradient(phi: &[f64], phi_hat: &[f64], sigma: f64, lambda: f64, grad_f: &[f64]) -> Result<Vec<f64>> {
    if phi.len() != phi_hat.len() || phi.len() != grad_f.len() {
        return Err(Error::DimensionMismatch(format!(
            "φ, φ̂ and ĝ_F have {}, {} and {} entries",
            phi.len(),
            phi_hat.len(),
            grad_f.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let c = 2.0 * lambda / (sigma * sigma);
    Ok(phi
        .iter()
        .zip(phi_hat)
        .zip(grad_f)
        .map(|((p, q), g)| c * (q - p) - g)
        .collect())
}

/// Batch-mean `∇_θ` of the loss with `ĝ_F` supplied by `grad_oracle`.
pub fn loss_gradient_with(
    theta: &DenoiserParams,
    batch: &[TrainSample],
    lambda: f64,
    mut grad_oracle: impl FnMut(&[f64], &EnvironmentSetting) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss needs a nonempty batch".into()));
    }
    let mut total = vec![0.0; theta.num_params()];
    for s in batch {
        let (phi_hat, trace) = denoise(theta, &s.phi, &s.psi, s.sigma)?;
        let g_f = grad_oracle(&phi_hat, &s.psi)?;
        let g_out = loss_output_gradient(&s.phi, &phi_hat, s.sigma, lambda, &g_f)?;
        for (t, g) in total.iter_mut().zip(backward(theta, &trace, &g_out)?) {
            *t += g;
        }
    }
    let n = batch.len() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    Ok(total)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    pub loss: f64,
    pub mean_rate: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub reset: bool,
    /// Counted channel calls made by this training run so far.
    pub channel_calls: u64,
}

pub const TRAIN_LOG_HEADER: &str = "iter,loss,mean_rate,sigma_min,sigma_max,reset,channel_calls";

impl TrainLogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
            self.iter,
            self.loss,
            self.mean_rate,
            self.sigma_min,
            self.sigma_max,
            u8::from(self.reset),
            self.channel_calls
        )
    }
}

pub fn write_train_log(rows: &[TrainLogRow], header_comment: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    if !header_comment.is_empty() {
        out.push_str(header_comment);
        out.push('\n');
    }
    out.push_str(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

struct SampleStep {
    phi_hat: Vec<f64>,
    loss: f64,
    rate: f64,
    grad: Vec<f64>,
}

/// Stateful runner for the training loop, one [`step`](Self::step) per
/// iteration.
pub struct Trainer<'a> {
    theta: DenoiserParams,
    cfg: TrainConfig,
    settings: Vec<EnvironmentSetting>,
    ev: &'a ChannelEvaluator,
    samples: Vec<TrainSample>,
    optimizer: Optimizer,
    rng: RngState,
    iteration: usize,
    calls_at_start: u64,
}

impl<'a> Trainer<'a> {
    /// Dataset of `batch_size` samples with `ψ` cycling through `settings`
    /// and random `φ` at `σ_init`.
    pub fn new(
        theta: DenoiserParams,
        settings: &[EnvironmentSetting],
        ev: &'a ChannelEvaluator,
        cfg: TrainConfig,
        mut rng: RngState,
    ) -> Result<Self> {
        cfg.validate()?;
        if settings.is_empty() {
            return Err(Error::Config("training needs at least one environment setting".into()));
        }
        if theta.n_p() != ev.n_params() || theta.dim_psi() != ev.setting_dim() {
            return Err(Error::DimensionMismatch(format!(
                "denoiser is built for N_p = {}, dim ψ = {}; channel has {} and {}",
                theta.n_p(),
                theta.dim_psi(),
                ev.n_params(),
                ev.setting_dim()
            )));
        }
        if cfg.m >= theta.n_p() {
            return Err(Error::Config(format!("m = {} must be below N_p = {}", cfg.m, theta.n_p())));
        }
        let n_p = theta.n_p();
        let samples = (0..cfg.batch_size)
            .map(|i| TrainSample {
                phi: rng.uniform(n_p),
                psi: settings[i % settings.len()].clone(),
                sigma: cfg.sigma_init,
            })
            .collect();
        let optimizer = Optimizer::new(cfg.optimizer, cfg.lr, theta.num_params());
        Ok(Self {
            theta,
            cfg,
            settings: settings.to_vec(),
            ev,
            samples,
            optimizer,
            rng,
            iteration: 0,
            calls_at_start: ev.call_count(),
        })
    }

    pub fn theta(&self) -> &DenoiserParams {
        &self.theta
    }

    pub fn into_theta(self) -> DenoiserParams {
        self.theta
    }

    pub fn samples(&self) -> &[TrainSample] {
        &self.samples
    }

    pub fn settings(&self) -> &[EnvironmentSetting] {
        &self.settings
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One iteration: maybe reset, denoise, pseudo-gradients, update, refine.
    pub fn step(&mut self) -> Result<TrainLogRow> {
        self.iteration += 1;
        let v = self.rng.uniform01();
        let reset = self.cfg.reset_rule.fires(v, self.cfg.gamma);
        if reset {
            let n_p = self.theta.n_p();
            for s in &mut self.samples {
                s.phi = self.rng.uniform(n_p);
                s.sigma = self.cfg.sigma_init;
            }
        }
        let rngs: Vec<RngState> = self.samples.iter().map(|_| self.rng.derive()).collect();
        let (theta, cfg, ev) = (&self.theta, &self.cfg, self.ev);
        let steps: Vec<SampleStep> = self
            .samples
            .par_iter()
            .zip(rngs)
            .map(|(s, mut rng)| sample_step(theta, s, cfg, ev, &mut rng))
            .collect::<Result<_>>()?;

        let n = steps.len() as f64;
        let loss = steps.iter().map(|s| s.loss).sum::<f64>() / n;
        let mean_rate = steps.iter().map(|s| s.rate).sum::<f64>() / n;
        let mut grad = vec![0.0; self.theta.num_params()];
        for s in &steps {
            for (g, x) in grad.iter_mut().zip(&s.grad) {
                *g += x;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            let dump = self
                .samples
                .iter()
                .zip(&steps)
                .enumerate()
                .map(|(i, (s, st))| format!("sample {i}: sigma={:e} loss={:e} rate={:e}", s.sigma, st.loss, st.rate))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                dump,
            });
        }
        let sigma_min = self.samples.iter().map(|s| s.sigma).fold(f64::INFINITY, f64::min);
        let sigma_max = self.samples.iter().map(|s| s.sigma).fold(0.0, f64::max);
        self.optimizer.update(&mut self.theta, &grad);
        for (s, st) in self.samples.iter_mut().zip(steps) {
            s.phi = st.phi_hat;
            s.sigma *= self.cfg.beta;
        }
        Ok(TrainLogRow {
            iter: self.iteration,
            loss,
            mean_rate,
            sigma_min,
            sigma_max,
            reset,
            channel_calls: self.ev.call_count() - self.calls_at_start,
        })
    }
}

fn sample_step(
    theta: &DenoiserParams,
    s: &TrainSample,
    cfg: &TrainConfig,
    ev: &ChannelEvaluator,
    rng: &mut RngState,
) -> Result<SampleStep> {
    let (phi_hat, trace) = denoise(theta, &s.phi, &s.psi, s.sigma)?;
    let grad_f = zero_order_gradient(
        |p| rate(ev, p, &s.psi, cfg.noise_var),
        &phi_hat,
        cfg.m,
        cfg.probe_radius,
        rng,
    )?;
    let f = rate(ev, &phi_hat, &s.psi, cfg.noise_var)?;
    let g_out = loss_output_gradient(&s.phi, &phi_hat, s.sigma, cfg.lambda, &grad_f)?;
    let grad = backward(theta, &trace, &g_out)?;
    let loss = cfg.lambda / (s.sigma * s.sigma) * dist2(&s.phi, &phi_hat) - f;
    Ok(SampleStep {
        phi_hat,
        loss,
        rate: f,
        grad,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub theta: DenoiserParams,
    pub log: Vec<TrainLogRow>,
}

/// Run `cfg.iterations` training iterations from `θ₀`.
pub fn train(
    theta0: DenoiserParams,
    settings: &[EnvironmentSetting],
    ev: &ChannelEvaluator,
    cfg: &TrainConfig,
    rng: RngState,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(theta0, settings, ev, cfg.clone(), rng)?;
    let mut log = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let row = trainer.step()?;
        log::debug!(
            "iter {} loss {:.4} rate {:.4} reset {}",
            row.iter,
            row.loss,
            row.mean_rate,
            row.reset
        );
        log.push(row);
    }
    Ok(TrainOutcome {
        theta: trainer.into_theta(),
        log,
    })
}

/// Fixed held-out batch: fresh random `φ` on each setting at `σ`.
pub fn held_out_batch(settings: &[EnvironmentSetting], per_setting: usize, sigma: f64, n_p: usize, rng: &mut RngState) -> Vec<TrainSample> {
    settings
        .iter()
        .flat_map(|psi| {
            (0..per_setting)
                .map(|_| TrainSample {
                    phi: Configuration::random(n_p, rng).into_vec(),
                    psi: psi.clone(),
                    sigma,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Mean rate of `D_θ(φ)` over `batch`, on the diagnostic counter.
pub fn held_out_rate(theta: &DenoiserParams, batch: &[TrainSample], ev: &ChannelEvaluator, noise_var: f64) -> Result<f64> {
    let rates: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            let (phi_hat, _) = denoise(theta, &s.phi, &s.psi, s.sigma)?;
            diagnostic_rate(ev, &phi_hat, &s.psi, noise_var)
        })
        .collect::<Result<_>>()?;
    Ok(rates.iter().sum::<f64>() / rates.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::channel::CascadedModel;
    use crate::scorenet::init_denoiser;

    fn cascaded() -> (ChannelEvaluator, CascadedModel, Vec<EnvironmentSetting>) {
        let model = CascadedModel::new(2, 2, 6, 2, 5);
        let ev = ChannelEvaluator::new(Arc::new(model.clone()));
        let settings = vec![
            EnvironmentSetting::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            EnvironmentSetting::new(vec![0.9, 0.8, 0.7, 0.6]).unwrap(),
        ];
        (ev, model, settings)
    }

    fn net(seed: u64) -> DenoiserParams {
        init_denoiser(6, 4, &[8, 8], &mut RngState::new(seed)).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 5,
            batch_size: 3,
            m: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn reset_rules() {
        assert!(ResetRule::Alg2Literal.fires(0.5, 0.25));
        assert!(!ResetRule::Alg2Literal.fires(0.2, 0.25));
        assert!(!ResetRule::TextSemantics.fires(0.5, 0.25));
        assert!(ResetRule::TextSemantics.fires(0.2, 0.25));
        assert!(!ResetRule::Alg2Literal.fires(1.0, 1.0));
        assert_eq!("alg2_literal".parse::<ResetRule>().unwrap(), ResetRule::Alg2Literal);
        assert_eq!("TEXT_SEMANTICS".parse::<ResetRule>().unwrap(), ResetRule::TextSemantics);
    }

    #[test]
    fn output_gradient_cases() {
        let phi = [0.2, 0.4];
        assert_eq!(loss_output_gradient(&phi, &phi, 0.3, 1.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(loss_output_gradient(&phi, &[0.9, 0.1], 0.3, 0.0, &[1.5, -2.0]).unwrap(), vec![-1.5, 2.0]);
        let g = loss_output_gradient(&phi, &[0.3, 0.4], 0.5, 2.0, &[0.0, 0.0]).unwrap();
        assert!((g[0] - 16.0 * 0.1).abs() < 1e-12 && g[1] == 0.0);
        assert!(matches!(
            loss_output_gradient(&phi, &[0.1], 0.5, 1.0, &[0.0, 0.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn loss_with_identity_like_outputs_and_lambda_scaling() {
        let (ev, model, settings) = cascaded();
        let theta = net(1);
        let batch: Vec<TrainSample> = settings
            .iter()
            .map(|psi| {
                let phi = denoise(&theta, &[0.5; 6], psi, 0.3).unwrap().0;
                TrainSample { phi, psi: psi.clone(), sigma: 0.3 }
            })
            .collect();
        let l0 = map_loss(&theta, &batch, 0.0, &ev, 1.0).unwrap();
        assert_eq!(ev.call_count(), 2);
        let l1 = map_loss(&theta, &batch, 1.0, &ev, 1.0).unwrap();
        let l2 = map_loss(&theta, &batch, 2.0, &ev, 1.0).unwrap();
        assert!(((l2 - l0) - 2.0 * (l1 - l0)).abs() < 1e-12);
        // Manual evaluation of the same average.
        let mut manual = 0.0;
        for s in &batch {
            let (out, _) = denoise(&theta, &s.phi, &s.psi, s.sigma).unwrap();
            let d: f64 = s.phi.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum();
            manual += d / 0.09 - model.rate(&out, &s.psi, 1.0).unwrap();
        }
        assert!((l1 - manual / 2.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_variant_matches_finite_differences() {
        let (_, model, settings) = cascaded();
        let theta = net(2);
        let mut rng = RngState::new(9);
        let batch: Vec<TrainSample> = settings
            .iter()
            .map(|psi| TrainSample {
                phi: rng.uniform(6),
                psi: psi.clone(),
                sigma: 0.4,
            })
            .collect();
        let lambda = 0.7;
        let grad = loss_gradient_with(&theta, &batch, lambda, |p, psi| model.rate_gradient(p, psi, 1.0)).unwrap();
        let loss = |t: &DenoiserParams| map_loss_with(t, &batch, lambda, |p, psi| model.rate(p, psi, 1.0)).unwrap();
        for i in 0..theta.num_params() {
            let h = 1e-6;
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up.values_mut()[i] += h;
            dn.values_mut()[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel <= 1e-5, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn call_accounting_and_log_rows() {
        let (ev, _, settings) = cascaded();
        let cfg = small_cfg();
        let out = train(net(3), &settings, &ev, &cfg, RngState::new(4)).unwrap();
        assert_eq!(out.log.len(), 5);
        assert_eq!(ev.call_count(), 5 * 3 * (2 * 2 + 1));
        assert_eq!(out.log[4].channel_calls, ev.call_count());
        assert!(out.log.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn never_resets_when_gamma_is_one() {
        let (ev, _, settings) = cascaded();
        let cfg = TrainConfig {
            gamma: 1.0,
            iterations: 6,
            ..small_cfg()
        };
        let mut trainer = Trainer::new(net(3), &settings, &ev, cfg.clone(), RngState::new(1)).unwrap();
        for _ in 0..6 {
            assert!(!trainer.step().unwrap().reset);
        }
        let expect = 0.5 * 0.9f64.powi(6);
        assert!(trainer.samples().iter().all(|s| (s.sigma - expect).abs() < 1e-15));
    }

    #[test]
    fn resets_every_iteration_when_gamma_is_zero() {
        let (ev, _, settings) = cascaded();
        let cfg = TrainConfig {
            gamma: 0.0,
            ..small_cfg()
        };
        let mut trainer = Trainer::new(net(3), &settings, &ev, cfg, RngState::new(1)).unwrap();
        for _ in 0..5 {
            let row = trainer.step().unwrap();
            assert!(row.reset);
            assert_eq!((row.sigma_min, row.sigma_max), (0.5, 0.5));
        }
    }

    #[test]
    fn sigma_bookkeeping_follows_resets() {
        let (ev, _, settings) = cascaded();
        let cfg = TrainConfig {
            gamma: 0.5,
            ..small_cfg()
        };
        let mut trainer = Trainer::new(net(5), &settings, &ev, cfg, RngState::new(2)).unwrap();
        let mut prev: Vec<f64> = trainer.samples().iter().map(|s| s.sigma).collect();
        let mut saw = (false, false);
        for _ in 0..20 {
            let row = trainer.step().unwrap();
            let now: Vec<f64> = trainer.samples().iter().map(|s| s.sigma).collect();
            for (p, n) in prev.iter().zip(&now) {
                let used = if row.reset { 0.5 } else { *p };
                assert_eq!(*n, 0.9 * used);
            }
            if row.reset {
                saw.0 = true;
            } else {
                saw.1 = true;
            }
            prev = now;
        }
        assert!(saw.0 && saw.1);
    }

    #[test]
    fn update_is_mean_of_per_sample_gradients() {
        let (_, model, settings) = cascaded();
        let theta = net(6);
        let mut rng = RngState::new(3);
        let batch: Vec<TrainSample> = settings
            .iter()
            .map(|psi| TrainSample {
                phi: rng.uniform(6),
                psi: psi.clone(),
                sigma: 0.5,
            })
            .collect();
        let oracle = |p: &[f64], psi: &EnvironmentSetting| model.rate_gradient(p, psi, 1.0);
        let both = loss_gradient_with(&theta, &batch, 1.0, oracle).unwrap();
        let a = loss_gradient_with(&theta, &batch[..1], 1.0, oracle).unwrap();
        let b = loss_gradient_with(&theta, &batch[1..], 1.0, oracle).unwrap();
        for i in 0..both.len() {
            assert!((both[i] - 0.5 * (a[i] + b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn large_lambda_drives_towards_identity() {
        let (ev, _, settings) = cascaded();
        let cfg = TrainConfig {
            lambda: 1e6,
            lr: 1e-3,
            gamma: 1.0,
            beta: 0.999_999,
            optimizer: OptimizerKind::Adam,
            batch_size: 1,
            ..small_cfg()
        };
        let mut trainer = Trainer::new(net(7), &settings[..1], &ev, cfg, RngState::new(5)).unwrap();
        let fixed = trainer.samples()[0].clone();
        let gap = |t: &DenoiserParams| {
            let (out, _) = denoise(t, &fixed.phi, &fixed.psi, fixed.sigma).unwrap();
            dist2(&out, &fixed.phi).sqrt()
        };
        let mut last = gap(trainer.theta());
        for _ in 0..50 {
            trainer.step().unwrap();
            // Keep training on the same input.
            trainer.samples[0] = fixed.clone();
            let now = gap(trainer.theta());
            assert!(now < last, "{now} >= {last}");
            last = now;
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (ev, _, settings) = cascaded();
        let a = train(net(3), &settings, &ev, &small_cfg(), RngState::new(4)).unwrap();
        let b = train(net(3), &settings, &ev, &small_cfg(), RngState::new(4)).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (ev, _, settings) = cascaded();
        for cfg in [
            TrainConfig { beta: 1.0, ..small_cfg() },
            TrainConfig { gamma: 1.5, ..small_cfg() },
            TrainConfig { batch_size: 0, ..small_cfg() },
            TrainConfig { m: 6, ..small_cfg() },
        ] {
            assert!(Trainer::new(net(1), &settings, &ev, cfg, RngState::new(0)).is_err());
        }
        assert!(Trainer::new(net(1), &[], &ev, small_cfg(), RngState::new(0)).is_err());
    }
}
