//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ris_ald::ald::ald_optimize;
use ris_ald::channel::{
    build_environment, desk_preset, greens, interaction_matrix, inverse_polarizability, place, simulate,
    solve_dipole_channel, CascadedModel, ChannelEvaluator, Dipole, DipoleKind, EnvironmentSetting,
};
use ris_ald::cli::{
    cmd_sweep_snr, cmd_train, heatmap_for_seed, mean, Experiment, ExperimentConfig, Method, SWEEP_FILE,
};
use ris_ald::numerics::{solve_linear, ComplexMatrix, RngState};
use ris_ald::objective::{achievable_rate, log_posterior, rate, zero_order_gradient, ObjectiveParams};
use ris_ald::scorenet::{backward, init_denoiser};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg")
}

/// Analytic denoiser gradients against central differences.
fn backprop_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = RngState::new(2024);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n_p = 1 + (rng.uniform01() * 4.0) as usize;
        let dim_psi = 1 + (rng.uniform01() * 3.0) as usize;
        let depth = 1 + (rng.uniform01() * 3.0) as usize;
        let hidden: Vec<usize> = (0..depth).map(|_| 2 + (rng.uniform01() * 5.0) as usize).collect();
        let mut theta = init_denoiser(n_p, dim_psi, &hidden, &mut rng).map_err(|e| e.to_string())?;
        let biases = rng.gaussian(theta.num_params());
        for (v, b) in theta.values_mut().iter_mut().zip(&biases) {
            *v += 0.1 * b;
        }
        let input = theta
            .input_vector(&rng.uniform(n_p), &rng.uniform(dim_psi), 0.05 + rng.uniform01())
            .map_err(|e| e.to_string())?;
        let w = rng.gaussian(n_p);
        let loss = |t: &ris_ald::scorenet::DenoiserParams| -> f64 {
            let out = t.forward(input.clone()).unwrap();
            out.output().iter().zip(&w).map(|(o, wi)| o * wi).sum()
        };
        let trace = theta.forward(input.clone()).map_err(|e| e.to_string())?;
        let grad = backward(&theta, &trace, &w).map_err(|e| e.to_string())?;
        for i in 0..theta.num_params() {
            let mut plus = theta.clone();
            plus.values_mut()[i] += h;
            let mut minus = theta.clone();
            minus.values_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs < 5.0,
        format!("worst relative error {worst:.2e}, {secs:.2} s"),
    )
}

/// Zero-order estimator mean on a linear objective; exact zero on a constant.
fn zero_order_unbiasedness() -> Outcome {
    let a = [0.7, -1.3, 0.4];
    let mut rng = RngState::new(13);
    let draws = 100_000;
    let mut acc = [0.0; 3];
    for _ in 0..draws {
        let g = zero_order_gradient(
            |p| Ok(p.iter().zip(&a).map(|(x, y)| x * y).sum()),
            &[0.3, 0.5, 0.6],
            1,
            1e-2,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        for (s, gi) in acc.iter_mut().zip(&g) {
            *s += gi / draws as f64;
        }
    }
    let err: f64 = acc.iter().zip(&a).map(|(m, t)| (m - t).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rel = err / norm;
    let constant = zero_order_gradient(|_| Ok(2.5), &[0.3, 0.5, 0.6], 1, 1e-2, &mut rng).map_err(|e| e.to_string())?;
    let zero = constant.iter().all(|g| *g == 0.0);
    check(rel <= 0.02 && zero, format!("relative l2 error {rel:.4}, constant gives zero: {zero}"))
}

/// Posterior mean on a grid prior versus the smoothed log-density gradient.
fn score_denoiser_identity() -> Outcome {
    let support: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let weights: Vec<f64> = support
        .iter()
        .map(|x| (-(x - 0.25_f64).powi(2) / 0.01).exp() + 0.5 * (-(x - 0.7_f64).powi(2) / 0.02).exp() + 0.05)
        .collect();
    let mut worst = 0.0f64;
    for sigma in [0.1, 0.3] {
        let kernel = |y: f64, x: f64| (-(y - x).powi(2) / (2.0 * sigma * sigma)).exp();
        let density = |y: f64| support.iter().zip(&weights).map(|(x, w)| w * kernel(y, *x)).sum::<f64>();
        for k in 0..=50 {
            let y = k as f64 / 50.0;
            let z = density(y);
            let post_mean = support.iter().zip(&weights).map(|(x, w)| w * kernel(y, *x) * x).sum::<f64>() / z;
            let score = (post_mean - y) / (sigma * sigma);
            let h = 1e-5;
            let fd = (density(y + h).ln() - density(y - h).ln()) / (2.0 * h);
            worst = worst.max((score - fd).abs());
        }
    }
    check(worst <= 1e-3, format!("max |score - fd| {worst:.2e}"))
}

/// Normalized posterior on a two-parameter grid versus brute-force Bayes.
fn posterior_on_grid() -> Outcome {
    let ev = ChannelEvaluator::new(Arc::new(CascadedModel::new(1, 2, 2, 2, 41)));
    let psi = EnvironmentSetting::new(vec![0.4, 0.7]).unwrap();
    let params = ObjectiveParams::new(0.5, 3.0).map_err(|e| e.to_string())?;
    let sigma = 0.2;
    let observed = [0.35, 0.6];
    let grid: Vec<[f64; 2]> = (0..=20)
        .flat_map(|i| (0..=20).map(move |j| [i as f64 / 20.0, j as f64 / 20.0]))
        .collect();

    let logs: Vec<f64> = grid
        .iter()
        .map(|p| log_posterior(p, &observed, &psi, sigma, &ev, &params))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let post: Vec<f64> = unnorm.iter().map(|u| u / z).collect();

    // Bayes: prior ∝ exp(α·rate), likelihood is the isotropic Gaussian density.
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let joint: Vec<f64> = grid
        .iter()
        .map(|p| {
            let prior = (params.alpha * rate(&ev, p, &psi, params.noise_var).unwrap()).exp();
            let d2 = (p[0] - observed[0]).powi(2) + (p[1] - observed[1]).powi(2);
            prior * norm * (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let evidence: f64 = joint.iter().sum();
    let bayes: Vec<f64> = joint.iter().map(|j| j / evidence).collect();

    let tv = 0.5 * post.iter().zip(&bayes).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
    let same_map = argmax(&logs) == argmax(&bayes);
    check(tv <= 1e-9 && same_map, format!("TV {tv:.2e}, MAP agrees: {same_map}"))
}

/// Reciprocity, the two-dipole closed form and monotonicity in SNR.
fn physics_sanity() -> Outcome {
    let env = build_environment(&desk_preset()).map_err(|e| e.to_string())?;
    let mut rng = RngState::new(5);
    let mut asym = 0.0f64;
    let mut monotone = true;
    for _ in 0..3 {
        let phi = rng.uniform(env.n_p);
        let psi = EnvironmentSetting::random(env.setting_dim(), &mut rng);
        let placed = place(&env, &phi, &psi).map_err(|e| e.to_string())?;
        for f in env.subband_freqs() {
            let w = interaction_matrix(&placed, f);
            let inv = solve_linear(&w, &ComplexMatrix::identity(w.rows())).map_err(|e| e.to_string())?;
            asym = asym.max(inv.max_abs_diff(&inv.transpose()));
        }
        let h = simulate(&env, &phi, &psi).map_err(|e| e.to_string())?;
        let rates: Vec<f64> = [4.0, 2.0, 1.0, 0.5, 0.25].iter().map(|nv| achievable_rate(&h, *nv)).collect();
        monotone &= rates.windows(2).all(|w| w[1] > w[0]);
    }

    let f = 2.4;
    let dipoles = vec![
        Dipole { kind: DipoleKind::Tx, pos: [0.1, 0.2], f_res_ghz: 2.3, gamma_ghz: 0.4, coupling: 1.1 },
        Dipole { kind: DipoleKind::Rx, pos: [0.7, 1.0], f_res_ghz: 2.5, gamma_ghz: 0.3, coupling: 0.9 },
    ];
    let h = solve_dipole_channel(&dipoles, &[0], &[1], &[f]).map_err(|e| e.to_string())?;
    let a0 = inverse_polarizability(2.3, f, 0.4, 1.1);
    let a1 = inverse_polarizability(2.5, f, 0.3, 0.9);
    let g = greens(1.0, f);
    let closed = g / (a0 * a1 - g * g);
    let err = (h.matrices()[0][(0, 0)] - closed).norm();
    check(
        asym <= 1e-8 && err <= 1e-10 && monotone,
        format!("max asymmetry {asym:.2e}, closed-form error {err:.2e}, monotone in SNR: {monotone}"),
    )
}

struct Trained {
    exp: Experiment,
    theta: ris_ald::scorenet::DenoiserParams,
    train_seconds: f64,
}

fn train_desk(out: &Path) -> Result<Trained, String> {
    let mut cfg = ExperimentConfig::from_file(&desk_config()).map_err(|e| e.to_string())?;
    cfg.out_dir = out.to_path_buf();
    let start = Instant::now();
    let exp = Experiment::new(cfg).map_err(|e| e.to_string())?;
    let result = exp.train().map_err(|e| e.to_string())?;
    Ok(Trained {
        exp,
        theta: result.theta,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Method ordering on the desk scene with the trained denoiser.
fn end_to_end_ordering(t: &Trained) -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let methods = [Method::Ald, Method::Random, Method::Zogd, Method::SimPerfect];
    let runs = t
        .exp
        .run_grid(&methods, &seeds, &[1.0], Some(&t.theta))
        .map_err(|e| e.to_string())?;
    let avg = |m: Method| mean(&runs.iter().filter(|r| r.method == m).map(|r| r.rate).collect::<Vec<_>>());
    let (ald, random, zogd, sim) = (avg(Method::Ald), avg(Method::Random), avg(Method::Zogd), avg(Method::SimPerfect));
    let total = t.train_seconds + start.elapsed().as_secs_f64();
    check(
        ald >= random && ald >= zogd && ald <= sim && total <= 900.0,
        format!("ald {ald:.4}, random {random:.4}, zogd {zogd:.4}, sim_perfect {sim:.4}, {total:.1} s"),
    )
}

/// Learned inference spends no channel calls; zogd spends 2m per step.
fn zero_call_inference(t: &Trained) -> Outcome {
    let ald = t.exp.run_method(Method::Ald, 0, 1.0, Some(&t.theta)).map_err(|e| e.to_string())?;
    let zogd = t.exp.run_method(Method::Zogd, 0, 1.0, None).map_err(|e| e.to_string())?;
    // The inference loop itself takes no evaluator at all.
    let ev = t.exp.world.fork();
    let psi = t.exp.setting_for_seed(0);
    let phi0 = t.exp.initial_configuration(0);
    ald_optimize(&t.theta, psi, &t.exp.cfg.schedule, &phi0, &mut RngState::new(0)).map_err(|e| e.to_string())?;
    check(
        ald.calls == 0 && ev.call_count() == 0 && zogd.calls == 400,
        format!("ald calls {}, zogd calls {}", ald.calls, zogd.calls),
    )
}

/// Receiver-region rate gain of the optimized configuration.
fn heatmap_effect(t: &Trained) -> Outcome {
    let mut positive = 0;
    let mut diffs = Vec::new();
    for seed in 0..10 {
        let r = heatmap_for_seed(&t.exp, Some(&t.theta), seed).map_err(|e| e.to_string())?;
        if r.receiver_mean_difference > 0.0 {
            positive += 1;
        }
        diffs.push(format!("{:.3}", r.receiver_mean_difference));
    }
    check(positive >= 8, format!("{positive}/10 seeds positive [{}]", diffs.join(", ")))
}

/// Bit-identical reruns of training and the SNR sweep.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::from_file(&desk_config()).map_err(|e| e.to_string())?;
    cfg.train.iterations = 10;
    cfg.seeds = vec![0, 1, 2];
    cfg.snrs = vec![0.5, 2.0];
    let mut files = Vec::new();
    for run in ["a", "b"] {
        cfg.out_dir = dir.path().join(run);
        let summary = cmd_train(&cfg).map_err(|e| e.to_string())?;
        cmd_sweep_snr(&cfg, &summary.checkpoint).map_err(|e| e.to_string())?;
        let read = |p: PathBuf| std::fs::read(&p).map_err(|e| e.to_string());
        files.push((
            read(summary.checkpoint)?,
            read(summary.log)?,
            read(cfg.out_dir.join(SWEEP_FILE))?,
        ));
    }
    let (a, b) = (&files[0], &files[1]);
    check(
        a.0 == b.0 && a.1 == b.1 && a.2 == b.2,
        format!(
            "checkpoint identical: {}, train log identical: {}, sweep identical: {}",
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2
        ),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    };
    report("1 backprop exactness", backprop_exactness());
    report("2 zero-order unbiasedness", zero_order_unbiasedness());
    report("3 score-denoiser identity", score_denoiser_identity());
    report("4 posterior on a discrete grid", posterior_on_grid());
    report("5 physics sanity", physics_sanity());

    let dir = tempfile::tempdir().expect("temporary directory");
    match train_desk(dir.path()) {
        Ok(t) => {
            report("6 end-to-end ordering", end_to_end_ordering(&t));
            report("7 zero-call inference", zero_call_inference(&t));
            report("8 heatmap effect", heatmap_effect(&t));
        }
        Err(e) => {
            for name in ["6 end-to-end ordering", "7 zero-call inference", "8 heatmap effect"] {
                report(name, Err(format!("training failed: {e}")));
            }
        }
    }
    report("9 determinism", determinism());

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
