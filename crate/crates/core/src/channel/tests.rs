use std::sync::Arc;

use super::*;
use crate::objective::achievable_rate;

fn desk() -> Environment {
    build_environment(&desk_preset()).unwrap()
}

fn desk_setting() -> EnvironmentSetting {
    EnvironmentSetting::new(vec![0.2, 0.3, 0.7, 0.8]).unwrap()
}

#[test]
fn two_dipole_closed_form() {
    let f = 1.0;
    let dipoles = vec![
        Dipole { kind: DipoleKind::Tx, pos: [0.0, 0.0], f_res_ghz: 1.02, gamma_ghz: 0.2, coupling: 1.5 },
        Dipole { kind: DipoleKind::Rx, pos: [0.9, 0.4], f_res_ghz: 1.02, gamma_ghz: 0.2, coupling: 1.5 },
    ];
    let h = solve_dipole_channel(&dipoles, &[0], &[1], &[f]).unwrap();
    let a = inverse_polarizability(1.02, f, 0.2, 1.5);
    let g = greens((0.81f64 + 0.16).sqrt(), f);
    let expected = g / (a * a - g * g);
    assert!((h.matrices()[0][(0, 0)] - expected).norm() <= 1e-10);
}

#[test]
fn evaluation_is_deterministic() {
    let ev = ChannelEvaluator::new(Arc::new(desk()));
    let phi = vec![0.37; 16];
    let a = ev.evaluate(&phi, &desk_setting()).unwrap();
    let b = ev.evaluate(&phi, &desk_setting()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_inverse_is_symmetric() {
    let env = desk();
    let mut rng = RngState::new(4);
    let phi = rng.uniform(16);
    let placed = place(&env, &phi, &desk_setting()).unwrap();
    for f in env.subband_freqs() {
        let w = interaction_matrix(&placed, f);
        let inv = crate::numerics::solve_linear(&w, &ComplexMatrix::identity(w.rows())).unwrap();
        assert!(inv.max_abs_diff(&inv.transpose()) <= 1e-8);
    }
    // TX→RX block equals the transpose of the RX→TX block.
    let fwd = simulate(&env, &phi, &desk_setting()).unwrap();
    let rev = solve_dipole_channel(&placed, env.rx_indices(), env.tx_indices(), &env.subband_freqs()).unwrap();
    for (a, b) in fwd.matrices().iter().zip(rev.matrices()) {
        assert!(a.max_abs_diff(&b.transpose()) <= 1e-8);
    }
}

#[test]
fn removing_the_wall_restores_line_of_sight() {
    let env = desk();
    let open = env.without_scatterers();
    let mut rng = RngState::new(12);
    for _ in 0..5 {
        let phi = rng.uniform(16);
        let psi = EnvironmentSetting::random(4, &mut rng);
        let blocked = simulate(&env, &phi, &psi).unwrap().mean_abs();
        let clear = simulate(&open, &phi, &psi).unwrap().mean_abs();
        assert!(clear > blocked, "blocked {blocked} clear {clear}");
    }
}

#[test]
fn desk_scene_is_programmable() {
    let env = desk();
    let psi = desk_setting();
    let mut rng = RngState::new(99);
    let rates: Vec<f64> = (0..64)
        .map(|_| achievable_rate(&simulate(&env, &rng.uniform(16), &psi).unwrap(), 1.0))
        .collect();
    let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo >= 0.1, "rate spread {lo}..{hi}");
}

#[test]
fn evaluator_counts_and_resets() {
    let ev = ChannelEvaluator::new(Arc::new(desk()));
    assert_eq!(ev.call_count(), 0);
    for _ in 0..3 {
        ev.evaluate(&[0.5; 16], &desk_setting()).unwrap();
    }
    assert_eq!(ev.call_count(), 3);
    ev.evaluate_diagnostic(&[0.5; 16], &desk_setting()).unwrap();
    assert_eq!(ev.call_count(), 3);
    assert_eq!(ev.diagnostic_count(), 1);
    ev.reset_calls();
    assert_eq!(ev.call_count(), 0);
}

#[test]
fn evaluator_clamps_out_of_box_configurations() {
    let ev = ChannelEvaluator::new(Arc::new(desk()));
    let mut phi = vec![0.5; 16];
    phi[0] = 1.3;
    phi[1] = -0.2;
    let a = ev.evaluate(&phi, &desk_setting()).unwrap();
    phi[0] = 1.0;
    phi[1] = 0.0;
    let b = ev.evaluate(&phi, &desk_setting()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ev.clamp_count(), 1);
}

#[test]
fn evaluator_counts_concurrent_calls() {
    let ev = ChannelEvaluator::new(Arc::new(CascadedModel::new(1, 1, 3, 1, 0)));
    let psi = EnvironmentSetting::new(vec![0.5, 0.5]).unwrap();
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                for _ in 0..25 {
                    ev.evaluate(&[0.1, 0.2, 0.3], &psi).unwrap();
                }
            });
        }
    });
    assert_eq!(ev.call_count(), 100);
}

#[test]
fn overlay_perturbs_relative_to_clean() {
    let env: Arc<dyn ChannelSource> = Arc::new(desk());
    let clean = ChannelEvaluator::new(Arc::clone(&env));
    let noisy = ChannelEvaluator::with_overlay(env, 1e-2, &mut RngState::new(3));
    let h0 = clean.evaluate(&[0.5; 16], &desk_setting()).unwrap();
    let h1 = noisy.evaluate(&[0.5; 16], &desk_setting()).unwrap();
    let h1b = noisy.evaluate(&[0.5; 16], &desk_setting()).unwrap();
    assert_eq!(h1, h1b);
    let mut sq = 0.0;
    let mut n = 0.0;
    for (a, b) in h0.matrices().iter().zip(h1.matrices()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            sq += ((y - x) / x).norm_sqr();
            n += 1.0;
        }
    }
    let rel_var = sq / n;
    assert!(rel_var > 0.0 && rel_var < 0.05, "relative variance {rel_var}");
}
