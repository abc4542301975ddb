//! The configuration-to-channel mapping `M_ψ(φ)`.
//!
//! Two sources implement [`ChannelSource`]: the coupled-dipole simulator
//! over an [`Environment`], and the closed-form [`CascadedModel`] used as a
//! differentiable test oracle. Both are reached through [`ChannelEvaluator`],
//! which counts calls.

mod cascaded;
mod dipole;
mod evaluator;
mod scene;

pub use cascaded::{evaluate_channel_cascaded, CascadedMatrices, CascadedModel};
pub use dipole::{
    greens, interaction_matrix, inverse_polarizability, place, simulate, solve_dipole_channel,
    SPEED_OF_LIGHT_M_PER_NS,
};
pub use evaluator::ChannelEvaluator;
pub use scene::{
    build_environment, desk_preset, paper_scale_preset, Dipole, DipoleKind, Environment, KindConstants, Rect,
    SceneConfig, MIN_SEPARATION_M,
};

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, RngState};

/// Anything that maps `(φ, ψ)` to a channel tensor.
pub trait ChannelSource: Send + Sync {
    fn n_params(&self) -> usize;
    fn setting_dim(&self) -> usize;
    /// `(N_rx, N_tx, B)`.
    fn shape(&self) -> (usize, usize, usize);
    fn compute(&self, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor>;
}

impl ChannelSource for Environment {
    fn n_params(&self) -> usize {
        self.n_p
    }

    fn setting_dim(&self) -> usize {
        Environment::setting_dim(self)
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.n_rx, self.n_tx, self.bands)
    }

    fn compute(&self, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor> {
        simulate(self, phi, psi)
    }
}

fn check_unit_box(values: &[f64], what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("{what} entry {v} outside [0, 1]")));
    }
    Ok(())
}

/// Controllable parameters `φ ∈ [0, 1]^{N_p}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration(Vec<f64>);

impl Configuration {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_unit_box(&values, "configuration")?;
        Ok(Self(values))
    }

    /// Project arbitrary values into the feasible box.
    pub fn clamped(values: Vec<f64>) -> Self {
        Self(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn uniform(dim: usize, value: f64) -> Self {
        Self::clamped(vec![value; dim])
    }

    pub fn random(dim: usize, rng: &mut RngState) -> Self {
        Self(rng.uniform(dim))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Uncontrollable parameters `ψ`: normalized `(x, y)` of each transmitter
/// inside the scene's transmitter box.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSetting(Vec<f64>);

impl EnvironmentSetting {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_unit_box(&values, "environment setting")?;
        Ok(Self(values))
    }

    pub fn random(dim: usize, rng: &mut RngState) -> Self {
        Self(rng.uniform(dim))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-subband channel matrices `H[1..B]`, each `N_rx × N_tx`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    matrices: Vec<ComplexMatrix>,
    freqs_ghz: Vec<f64>,
}

impl ChannelTensor {
    pub fn new(matrices: Vec<ComplexMatrix>, freqs_ghz: Vec<f64>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(Error::DimensionMismatch("channel tensor needs at least one subband".into()));
        };
        let shape = (first.rows(), first.cols());
        if matrices.iter().any(|m| (m.rows(), m.cols()) != shape) {
            return Err(Error::DimensionMismatch("subband matrices differ in shape".into()));
        }
        if freqs_ghz.len() != matrices.len() {
            return Err(Error::DimensionMismatch("one frequency per subband required".into()));
        }
        if matrices
            .iter()
            .flat_map(|m| m.as_slice())
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::DegenerateScene("channel has non-finite entries".into()));
        }
        Ok(Self { matrices, freqs_ghz })
    }

    pub fn matrices(&self) -> &[ComplexMatrix] {
        &self.matrices
    }

    pub fn freqs_ghz(&self) -> &[f64] {
        &self.freqs_ghz
    }

    pub fn bands(&self) -> usize {
        self.matrices.len()
    }

    /// Mean entry magnitude over all subbands.
    pub fn mean_abs(&self) -> f64 {
        let n: usize = self.matrices.iter().map(|m| m.as_slice().len()).sum();
        self.matrices
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|z| z.norm())
            .sum::<f64>()
            / n as f64
    }

    fn hadamard(&self, factors: &[ComplexMatrix]) -> Result<Self> {
        let matrices = self
            .matrices
            .iter()
            .zip(factors)
            .map(|(h, e)| ComplexMatrix::from_fn(h.rows(), h.cols(), |r, c| h[(r, c)] * e[(r, c)]))
            .collect();
        Self::new(matrices, self.freqs_ghz.clone())
    }
}

#[cfg(test)]
mod tests;
