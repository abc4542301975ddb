//! Counted, clamping front door to a channel source.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;

use super::{ChannelSource, ChannelTensor, EnvironmentSetting};
use crate::error::Result;
use crate::numerics::{ComplexMatrix, RngState};

/// Multiplicative mismatch `H ∘ (1 + e)`, one frozen realization per evaluator.
#[derive(Clone, Debug)]
struct Overlay {
    level: f64,
    factors: Vec<ComplexMatrix>,
}

/// Wraps a channel source with call accounting.
///
/// `evaluate` is the optimization path and advances [`call_count`];
/// `evaluate_diagnostic` is for reporting only and advances a separate
/// counter. Configurations outside `[0, 1]` are clamped and the event is
/// logged.
///
/// [`call_count`]: ChannelEvaluator::call_count
pub struct ChannelEvaluator {
    source: Arc<dyn ChannelSource>,
    overlay: Option<Overlay>,
    calls: AtomicU64,
    diagnostic_calls: AtomicU64,
    clamp_events: AtomicU64,
}

impl std::fmt::Debug for ChannelEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelEvaluator")
            .field("n_params", &self.source.n_params())
            .field("overlay", &self.overlay_level())
            .field("calls", &self.call_count())
            .finish()
    }
}

impl ChannelEvaluator {
    pub fn new(source: Arc<dyn ChannelSource>) -> Self {
        Self {
            source,
            overlay: None,
            calls: AtomicU64::new(0),
            diagnostic_calls: AtomicU64::new(0),
            clamp_events: AtomicU64::new(0),
        }
    }

    /// Evaluator whose channels carry relative complex Gaussian mismatch of
    /// variance `level`, drawn once from `rng`.
    pub fn with_overlay(source: Arc<dyn ChannelSource>, level: f64, rng: &mut RngState) -> Self {
        let mut ev = Self::new(source);
        if level > 0.0 {
            let (n_rx, n_tx, bands) = ev.source.shape();
            let sd = (level / 2.0).sqrt();
            let factors = (0..bands)
                .map(|_| {
                    let g = rng.gaussian(2 * n_rx * n_tx);
                    ComplexMatrix::from_fn(n_rx, n_tx, |r, c| {
                        let i = 2 * (r * n_tx + c);
                        Complex64::new(1.0 + sd * g[i], sd * g[i + 1])
                    })
                })
                .collect();
            ev.overlay = Some(Overlay { level, factors });
        }
        ev
    }

    /// Fresh counters over the same source and overlay.
    pub fn fork(&self) -> Self {
        Self {
            source: Arc::clone(&self.source),
            overlay: self.overlay.clone(),
            calls: AtomicU64::new(0),
            diagnostic_calls: AtomicU64::new(0),
            clamp_events: AtomicU64::new(0),
        }
    }

    pub fn source(&self) -> &Arc<dyn ChannelSource> {
        &self.source
    }

    pub fn n_params(&self) -> usize {
        self.source.n_params()
    }

    pub fn setting_dim(&self) -> usize {
        self.source.setting_dim()
    }

    pub fn overlay_level(&self) -> f64 {
        self.overlay.as_ref().map_or(0.0, |o| o.level)
    }

    /// Counted evaluation.
    pub fn evaluate(&self, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.compute(phi, psi)
    }

    /// Evaluation for reporting; does not touch [`Self::call_count`].
    pub fn evaluate_diagnostic(&self, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor> {
        self.diagnostic_calls.fetch_add(1, Ordering::Relaxed);
        self.compute(phi, psi)
    }

    fn compute(&self, phi: &[f64], psi: &EnvironmentSetting) -> Result<ChannelTensor> {
        let clamped;
        let phi = if phi.iter().all(|x| (0.0..=1.0).contains(x)) {
            phi
        } else {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            log::debug!("clamping configuration into [0, 1] at the channel boundary");
            clamped = phi.iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
            &clamped
        };
        let h = self.source.compute(phi, psi)?;
        match &self.overlay {
            None => Ok(h),
            Some(o) => h.hadamard(&o.factors),
        }
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn diagnostic_count(&self) -> u64 {
        self.diagnostic_calls.load(Ordering::Relaxed)
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }
}
