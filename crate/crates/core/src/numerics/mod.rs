//! Complex linear algebra kernels and seeded sampling primitives.

mod matrix;
mod rng;

pub use matrix::{hermitian_logdet2, solve_linear, ComplexMatrix, HERMITIAN_TOL, PIVOT_FLOOR};
pub use num_complex::Complex64;
pub use rng::{sample_gaussian, sample_unit_sphere, RngState, RNG_ALGORITHM};
