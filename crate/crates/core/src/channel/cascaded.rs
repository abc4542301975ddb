//! Closed-form cascaded RIS channel `H[b] = H₂[b]·diag(e^{j2πφ})·H₁[b]`.
//!
//! Only used as a differentiable oracle in tests: the rate gradient with
//! respect to `φ` is available analytically here, unlike for the dipole
//! simulator.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;

use super::{ChannelSource, ChannelTensor, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::numerics::{solve_linear, ComplexMatrix, RngState};
use crate::objective::achievable_rate;

#[derive(Clone, Debug, PartialEq)]
pub struct CascadedModel {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_p: usize,
    pub bands: usize,
    pub seed: u64,
}

/// Per-subband `(H₁, H₂)` pairs for one environment setting.
#[derive(Clone, Debug)]
pub struct CascadedMatrices {
    pub h1: Vec<ComplexMatrix>,
    pub h2: Vec<ComplexMatrix>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl CascadedModel {
    pub fn new(n_tx: usize, n_rx: usize, n_p: usize, bands: usize, seed: u64) -> Self {
        Self {
            n_tx,
            n_rx,
            n_p,
            bands,
            seed,
        }
    }

    /// Draw the fixed matrices for `ψ` from a generator keyed by `(seed, ψ)`.
    pub fn matrices(&self, psi: &EnvironmentSetting) -> CascadedMatrices {
        let key = psi
            .as_slice()
            .iter()
            .fold(splitmix(self.seed), |acc, x| splitmix(acc ^ x.to_bits()));
        let mut rng = RngState::new(key);
        let scale = (0.5 / self.n_p as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            let g = rng.gaussian(2 * rows * cols);
            ComplexMatrix::from_fn(rows, cols, |r, c| {
                let i = 2 * (r * cols + c);
                Complex64::new(g[i], g[i + 1]) * scale
            })
        };
        let mut h1 = Vec::with_capacity(self.bands);
        let mut h2 = Vec::with_capacity(self.bands);
        for _ in 0..self.bands {
            h1.push(draw(self.n_p, self.n_tx));
            h2.push(draw(self.n_rx, self.n_p));
        }
        CascadedMatrices { h1, h2 }
    }

    fn check(&self, phi: &[f64], psi: &EnvironmentSetting) -> Result<()> {
        if phi.len() != self.n_p {
            return Err(Error::DimensionMismatch(format!(
                "configuration has {} entries, expected {}",
                phi.len(),
                self.n_p
            )));
        }
        if psi.len() != 2 * self.n_tx {
            return Err(Error::DimensionMismatch(format!(
                "environment setting has {} entries, expected {}",
                psi.len(),
                2 * self.n_tx
            )));
        }
        Ok(())
    }

    /// Analytic gradient of the achievable rate with respect to `φ`.
    pub fn rate_gradient(&self, phi: &[f64], psi: &EnvironmentSetting, noise_var: f64) -> Result<Vec<f64>> {
        self.check(phi, psi)?;
        let mats = self.matrices(psi);
        let snr = 1.0 / noise_var;
        let mut grad = vec![0.0; self.n_p];
        for b in 0..self.bands {
            let h = cascade(&mats.h1[b], &mats.h2[b], phi);
            let hh = h.adjoint();
            let m = ComplexMatrix::identity(self.n_rx).add(&(&h * &hh).scale(Complex64::new(snr, 0.0)))?;
            // P = Hᴴ M⁻¹ = (M⁻¹ H)ᴴ since M is Hermitian.
            let p = solve_linear(&m, &h)?.adjoint();
            for (n, g) in grad.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for t in 0..self.n_tx {
                    for r in 0..self.n_rx {
                        acc += mats.h1[b][(n, t)] * p[(t, r)] * mats.h2[b][(r, n)];
                    }
                }
                let dphase = Complex64::new(0.0, 2.0 * PI) * Complex64::from_polar(1.0, 2.0 * PI * phi[n]);
                *g += (dphase * acc).re;
            }
        }
        let factor = 2.0 * snr / (self.bands as f64 * LN_2);
        grad.iter_mut().for_each(|g| *g *= factor);
        Ok(grad)
    }

    /// Rate computed directly from the closed form.
    pub fn rate(&self, phi: &[f64], psi: &EnvironmentSetting, noise_var: f64) -> Result<f64> {
        Ok(achievable_rate(&evaluate_channel_cascaded(self, phi, psi)?, noise_var))
    }
}

fn cascade(h1: &ComplexMatrix, h2: &ComplexMatrix, phi: &[f64]) -> ComplexMatrix {
    let n_p = phi.len();
    let phases: Vec<Complex64> = phi.iter().map(|p| Complex64::from_polar(1.0, 2.0 * PI * p)).collect();
    ComplexMatrix::from_fn(h2.rows(), h1.cols(), |r, t| {
        (0..n_p).map(|n| h2[(r, n)] * phases[n] * h1[(n, t)]).sum()
    })
}

/// Closed-form channel tensor. Does not clamp `φ`.
pub fn evaluate_channel_cascaded(model: &CascadedModel, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor> {
    model.check(phi, psi)?;
    let mats = model.matrices(psi);
    let matrices = (0..model.bands).map(|b| cascade(&mats.h1[b], &mats.h2[b], phi)).collect();
    let freqs = (0..model.bands).map(|b| b as f64).collect();
    ChannelTensor::new(matrices, freqs)
}

impl ChannelSource for CascadedModel {
    fn n_params(&self) -> usize {
        self.n_p
    }

    fn setting_dim(&self) -> usize {
        2 * self.n_tx
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.n_rx, self.n_tx, self.bands)
    }

    fn compute(&self, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor> {
        evaluate_channel_cascaded(self, phi, psi)
    }
}
