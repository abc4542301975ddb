//! Optimization of programmable wireless channels with annealed Langevin
//! dynamics driven by a learned denoiser.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: complex LU / Cholesky kernels and seeded sampling.
//! - [`channel`]: coupled-dipole simulator, cascaded oracle, counted evaluator.
//! - [`objective`]: achievable rate, surrogate prior/posterior, zero-order gradients.
//! - [`scorenet`]: the fully-connected denoiser with manual backprop and checkpoints.
//! - [`ald`]: the annealed Langevin optimizer that uses the denoiser as its score.
//! - [`training`]: active-learning training with the MAP loss and pseudo-gradients.
//! - [`baselines`]: zero-order descent, random search, simulator gradient ascent.
//! - [`cli`]: experiment commands behind the `ris-ald` binary.

pub mod channel;
pub mod error;
pub mod kv;
pub mod numerics;
pub mod objective;
pub mod scorenet;
pub mod ald;
pub mod training;
pub mod baselines;
pub mod cli;

pub use error::{Error, Result};
