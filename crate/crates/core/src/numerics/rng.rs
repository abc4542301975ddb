//! Seeded randomness. Every stochastic component draws from [`RngState`], a
//! ChaCha20 stream keyed by a 64-bit seed, so a seed replays bit-exactly on
//! any platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream under the same seed (per-worker splitting).
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child generator seeded from this stream's next output.
    pub fn derive(&mut self) -> RngState {
        RngState::new(self.inner.next_u64())
    }

    pub fn uniform01(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.uniform01()).collect()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn gaussian(&mut self, dim: usize) -> Vec<f64> {
        sample_gaussian(dim, self)
    }

    pub fn unit_sphere(&mut self, dim: usize) -> Vec<f64> {
        sample_unit_sphere(dim, self)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// I.i.d. standard normal vector.
pub fn sample_gaussian(dim: usize, rng: &mut RngState) -> Vec<f64> {
    (0..dim).map(|_| rng.standard_normal()).collect()
}

/// Uniform draw from the unit sphere in `dim` dimensions (normalized Gaussian).
pub fn sample_unit_sphere(dim: usize, rng: &mut RngState) -> Vec<f64> {
    assert!(dim >= 1, "sphere dimension must be positive");
    loop {
        let mut v = sample_gaussian(dim, rng);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-150 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}
