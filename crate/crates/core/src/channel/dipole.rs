//! Coupled-dipole channel simulator.
//!
//! Every dipole `i` carries a Lorentzian inverse polarizability
//! `(f_res² − f² + j·f·Γ) / A`, and dipoles interact through the scalar
//! free-space Green's function `exp(−jkr) / (4πr)`. The interaction matrix
//!
//! ```text
//!   W_ii = α_i⁻¹(f),   W_ik = −G(r_ik)
//! ```
//!
//! is complex symmetric. Exciting the transmit dipoles one at a time and
//! reading the response at the receive dipoles gives `H = [W⁻¹]_{RX,TX}`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::scene::{check_separation, distance, Dipole, Environment};
use super::{ChannelTensor, EnvironmentSetting};
use crate::error::{Error, Result};
use crate::numerics::{solve_linear, ComplexMatrix};

/// Speed of light in meters per nanosecond, so `f` in GHz gives `k` in rad/m.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299_792_458;

/// Scalar free-space Green's function at distance `r` (m) and frequency `f` (GHz).
pub fn greens(r: f64, f_ghz: f64) -> Complex64 {
    let k = 2.0 * PI * f_ghz / SPEED_OF_LIGHT_M_PER_NS;
    Complex64::from_polar(1.0 / (4.0 * PI * r), -k * r)
}

/// Lorentzian inverse polarizability.
pub fn inverse_polarizability(f_res: f64, f: f64, gamma: f64, coupling: f64) -> Complex64 {
    Complex64::new(f_res * f_res - f * f, f * gamma) / coupling
}

/// Dipoles with the configuration and setting applied: RIS resonances follow
/// `φ`, transmitter positions follow `ψ`.
pub fn place(env: &Environment, phi: &[f64], psi: &EnvironmentSetting) -> Result<Vec<Dipole>> {
    if phi.len() != env.n_p {
        return Err(Error::DimensionMismatch(format!(
            "configuration has {} entries, scene has {} RIS parameters",
            phi.len(),
            env.n_p
        )));
    }
    if psi.len() != env.setting_dim() {
        return Err(Error::DimensionMismatch(format!(
            "environment setting has {} entries, expected {}",
            psi.len(),
            env.setting_dim()
        )));
    }
    let mut placed = env.dipoles.clone();
    for (n, &i) in env.ris_indices().iter().enumerate() {
        placed[i].f_res_ghz = env.ris_resonance(phi[n]);
    }
    let psi = psi.as_slice();
    for (t, &i) in env.tx_indices().iter().enumerate() {
        placed[i].pos = env.tx_box.at(psi[2 * t], psi[2 * t + 1]);
    }
    Ok(placed)
}

/// Interaction matrix `W` over all dipoles at frequency `f_ghz`.
pub fn interaction_matrix(dipoles: &[Dipole], f_ghz: f64) -> ComplexMatrix {
    let n = dipoles.len();
    let mut w = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        let d = &dipoles[i];
        w[(i, i)] = inverse_polarizability(d.f_res_ghz, f_ghz, d.gamma_ghz, d.coupling);
        for k in i + 1..n {
            let g = -greens(distance(d.pos, dipoles[k].pos), f_ghz);
            w[(i, k)] = g;
            w[(k, i)] = g;
        }
    }
    w
}

/// Solve the coupled-dipole system on an explicit dipole list: column `t` of
/// each returned matrix is the response at `rx` to a unit excitation of
/// dipole `tx[t]`.
pub fn solve_dipole_channel(dipoles: &[Dipole], tx: &[usize], rx: &[usize], freqs: &[f64]) -> Result<ChannelTensor> {
    check_separation(dipoles).map_err(Error::DegenerateScene)?;
    let n = dipoles.len();
    let mut excitation = ComplexMatrix::zeros(n, tx.len());
    for (t, &i) in tx.iter().enumerate() {
        excitation[(i, t)] = Complex64::new(1.0, 0.0);
    }
    let mut matrices = Vec::with_capacity(freqs.len());
    for &f in freqs {
        let w = interaction_matrix(dipoles, f);
        let x = solve_linear(&w, &excitation).map_err(|e| match e {
            Error::SingularMatrix { column, pivot } => Error::DegenerateScene(format!(
                "interaction matrix singular at {f} GHz (column {column}, pivot {pivot:e})"
            )),
            other => other,
        })?;
        matrices.push(x.select_rows(rx));
    }
    ChannelTensor::new(matrices, freqs.to_vec())
}

/// Full channel tensor for `(φ, ψ)`. `φ` must already lie in `[0, 1]`.
pub fn simulate(env: &Environment, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor> {
    let placed = place(env, phi, psi)?;
    solve_dipole_channel(&placed, env.tx_indices(), env.rx_indices(), &env.subband_freqs())
}
