//! Figure of merit, the rate-driven surrogate prior and posterior, and the
//! two-point zero-order gradient estimator.

use num_complex::Complex64;

use crate::channel::{ChannelEvaluator, ChannelTensor, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::numerics::{hermitian_logdet2, ComplexMatrix, RngState};

/// Default probe radius for zero-order gradients, in `φ` units.
pub const DEFAULT_PROBE_RADIUS: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveParams {
    /// AWGN variance `σ_w²` (linear).
    pub noise_var: f64,
    /// Sharpness of the surrogate field `exp(α·F)`.
    pub alpha: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            noise_var: 1.0,
            alpha: 1.0,
        }
    }
}

impl ObjectiveParams {
    pub fn new(noise_var: f64, alpha: f64) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {noise_var}")));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { noise_var, alpha })
    }

    /// Flat field (`α = 0`), only useful in tests of the prior's scaling.
    pub fn flat(noise_var: f64) -> Self {
        Self { noise_var, alpha: 0.0 }
    }
}

/// `I + s·H·Hᴴ`, built exactly Hermitian.
fn gram_plus_identity(h: &ComplexMatrix, snr: f64) -> ComplexMatrix {
    let n = h.rows();
    let mut m = ComplexMatrix::identity(n);
    for r in 0..n {
        for c in r..n {
            let dot: Complex64 = h.row(r).iter().zip(h.row(c)).map(|(a, b)| a * b.conj()).sum();
            let v = dot * snr;
            if r == c {
                m[(r, r)] += Complex64::new(v.re, 0.0);
            } else {
                m[(r, c)] += v;
                m[(c, r)] += v.conj();
            }
        }
    }
    m
}

/// Mean over subbands of `log₂|I + σ_w⁻²·H[b]·H[b]ᴴ|`, in bits per channel use.
pub fn achievable_rate(h: &ChannelTensor, noise_var: f64) -> f64 {
    assert!(noise_var > 0.0, "noise variance must be positive");
    let snr = 1.0 / noise_var;
    let total: f64 = h
        .matrices()
        .iter()
        .map(|hb| hermitian_logdet2(&gram_plus_identity(hb, snr)).expect("I + sHHᴴ is positive definite"))
        .sum();
    total / h.bands() as f64
}

/// Counted rate evaluation of `(φ, ψ)`.
pub fn rate(ev: &ChannelEvaluator, phi: &[f64], psi: &EnvironmentSetting, noise_var: f64) -> Result<f64> {
    Ok(achievable_rate(&ev.evaluate(phi, psi)?, noise_var))
}

/// Rate for reporting only (separate counter).
pub fn diagnostic_rate(ev: &ChannelEvaluator, phi: &[f64], psi: &EnvironmentSetting, noise_var: f64) -> Result<f64> {
    Ok(achievable_rate(&ev.evaluate_diagnostic(phi, psi)?, noise_var))
}

/// Unnormalized log surrogate prior `α·F(M_ψ(φ))`. One evaluator call.
pub fn log_surrogate_prior(
    phi: &[f64],
    psi: &EnvironmentSetting,
    ev: &ChannelEvaluator,
    params: &ObjectiveParams,
) -> Result<f64> {
    Ok(params.alpha * rate(ev, phi, psi, params.noise_var)?)
}

/// Unnormalized log posterior `α·F(M_ψ(φ)) − ‖φ̃ − φ‖² / (2σ²)`; its argmax is
/// the MAP estimate of `φ` from the noisy observation `φ̃`.
pub fn log_posterior(
    phi: &[f64],
    phi_noisy: &[f64],
    psi: &EnvironmentSetting,
    sigma: f64,
    ev: &ChannelEvaluator,
    params: &ObjectiveParams,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if phi.len() != phi_noisy.len() {
        return Err(Error::DimensionMismatch(format!(
            "φ has {} entries, φ̃ has {}",
            phi.len(),
            phi_noisy.len()
        )));
    }
    let dist2: f64 = phi.iter().zip(phi_noisy).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(log_surrogate_prior(phi, psi, ev, params)? - dist2 / (2.0 * sigma * sigma))
}

/// Two-point zero-order gradient estimate from `2m` objective calls:
///
/// ```text
///   ĝ = (N_p / m) Σ_j [(F(φ + ε·u_j) − F(φ − ε·u_j)) / 2ε] · u_j
/// ```
///
/// with `u_j` uniform on the unit sphere. Probes are passed unclamped; the
/// difference quotient always uses the requested displacement.
pub fn zero_order_gradient<F>(
    mut objective: F,
    phi: &[f64],
    m: usize,
    radius: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n_p = phi.len();
    if m == 0 || m >= n_p {
        return Err(Error::InvalidArgument(format!(
            "zero-order estimator needs 1 <= m < N_p, got m = {m}, N_p = {n_p}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("probe radius must be positive, got {radius}")));
    }
    let mut grad = vec![0.0; n_p];
    let mut plus = vec![0.0; n_p];
    let mut minus = vec![0.0; n_p];
    for _ in 0..m {
        let u = rng.unit_sphere(n_p);
        for i in 0..n_p {
            plus[i] = phi[i] + radius * u[i];
            minus[i] = phi[i] - radius * u[i];
        }
        let slope = (objective(&plus)? - objective(&minus)?) / (2.0 * radius);
        for (g, ui) in grad.iter_mut().zip(&u) {
            *g += slope * ui;
        }
    }
    let scale = n_p as f64 / m as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::channel::CascadedModel;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn tensor(ms: Vec<ComplexMatrix>) -> ChannelTensor {
        let n = ms.len();
        ChannelTensor::new(ms, vec![1.0; n]).unwrap()
    }

    #[test]
    fn rate_trivial_cases() {
        assert_eq!(achievable_rate(&tensor(vec![ComplexMatrix::zeros(2, 3)]), 1.0), 0.0);
        let one = ComplexMatrix::from_diag(&[c(1.0)]);
        assert!((achievable_rate(&tensor(vec![one]), 1.0) - 1.0).abs() < 1e-15);
        let id = ComplexMatrix::identity(2);
        assert!((achievable_rate(&tensor(vec![id.clone(), id]), 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rate_matches_eigenvalue_sum_on_2x2() {
        // For a 2x2 Hermitian M the eigenvalues solve x² − tr·x + det = 0.
        let mut rng = RngState::new(31);
        for _ in 0..50 {
            let g = rng.gaussian(8);
            let h = ComplexMatrix::from_fn(2, 2, |r, k| Complex64::new(g[2 * (2 * r + k)], g[2 * (2 * r + k) + 1]));
            let noise_var = 0.3 + rng.uniform01();
            let m = gram_plus_identity(&h, 1.0 / noise_var);
            let tr = m[(0, 0)].re + m[(1, 1)].re;
            let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).re;
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            let oracle = (tr / 2.0 + disc).log2() + (tr / 2.0 - disc).log2();
            let got = achievable_rate(&tensor(vec![h]), noise_var);
            assert!((got - oracle).abs() <= 1e-8, "{got} vs {oracle}");
        }
    }

    #[test]
    fn rate_is_monotone_in_snr() {
        let mut rng = RngState::new(2);
        let g = rng.gaussian(12);
        let h = ComplexMatrix::from_fn(2, 3, |r, k| Complex64::new(g[2 * (3 * r + k)], g[2 * (3 * r + k) + 1]));
        let t = tensor(vec![h]);
        let mut prev = 0.0;
        for noise_var in [10.0, 3.0, 1.0, 0.3, 0.1] {
            let r = achievable_rate(&t, noise_var);
            assert!(r > prev);
            prev = r;
        }
    }

    fn cascaded_ev() -> (ChannelEvaluator, EnvironmentSetting) {
        let model = CascadedModel::new(1, 2, 4, 2, 5);
        (
            ChannelEvaluator::new(Arc::new(model)),
            EnvironmentSetting::new(vec![0.3, 0.6]).unwrap(),
        )
    }

    #[test]
    fn prior_scales_with_alpha() {
        let (ev, psi) = cascaded_ev();
        let phi = [0.1, 0.2, 0.3, 0.4];
        let flat = log_surrogate_prior(&phi, &psi, &ev, &ObjectiveParams::flat(1.0)).unwrap();
        assert_eq!(flat, 0.0);
        let p1 = log_surrogate_prior(&phi, &psi, &ev, &ObjectiveParams::new(1.0, 1.0).unwrap()).unwrap();
        let p2 = log_surrogate_prior(&phi, &psi, &ev, &ObjectiveParams::new(1.0, 2.0).unwrap()).unwrap();
        assert_eq!(p2, 2.0 * p1);
        assert_eq!(ev.call_count(), 3);
    }

    #[test]
    fn posterior_reduces_to_prior() {
        let (ev, psi) = cascaded_ev();
        let params = ObjectiveParams::default();
        let phi = [0.1, 0.2, 0.3, 0.4];
        let prior = log_surrogate_prior(&phi, &psi, &ev, &params).unwrap();
        assert_eq!(log_posterior(&phi, &phi, &psi, 0.3, &ev, &params).unwrap(), prior);
        let far = [0.9, 0.2, 0.3, 0.4];
        let post = log_posterior(&phi, &far, &psi, 1e9, &ev, &params).unwrap();
        assert!((post - prior).abs() <= 1e-9);
        assert!(log_posterior(&phi, &far, &psi, 0.0, &ev, &params).is_err());
    }

    #[test]
    fn zero_order_constant_objective_is_zero() {
        let mut rng = RngState::new(8);
        let g = zero_order_gradient(|_| Ok(3.25), &[0.2, 0.4, 0.6, 0.8], 3, 0.01, &mut rng).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_order_makes_2m_calls() {
        let mut rng = RngState::new(8);
        let mut calls = 0;
        zero_order_gradient(
            |_| {
                calls += 1;
                Ok(0.0)
            },
            &[0.5; 16],
            4,
            0.01,
            &mut rng,
        )
        .unwrap();
        assert_eq!(calls, 8);
    }

    #[test]
    fn zero_order_rejects_bad_m() {
        let mut rng = RngState::new(8);
        assert!(zero_order_gradient(|_| Ok(0.0), &[0.5; 3], 3, 0.01, &mut rng).is_err());
        assert!(zero_order_gradient(|_| Ok(0.0), &[0.5; 3], 0, 0.01, &mut rng).is_err());
        assert!(zero_order_gradient(|_| Ok(0.0), &[0.5; 3], 1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn zero_order_quadratic_mean() {
        // F = ‖φ‖² at (0.5, 0.5) has gradient (1, 1); a central difference
        // is exact for quadratics so the estimator is unbiased.
        let mut rng = RngState::new(77);
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let g = zero_order_gradient(|p| Ok(p.iter().map(|x| x * x).sum()), &[0.5, 0.5], 1, 1e-3, &mut rng).unwrap();
            mean[0] += g[0] / n as f64;
            mean[1] += g[1] / n as f64;
        }
        let err = ((mean[0] - 1.0).powi(2) + (mean[1] - 1.0).powi(2)).sqrt() / 2f64.sqrt();
        assert!(err <= 0.02, "mean {mean:?}");
    }
}
