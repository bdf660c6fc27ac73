//! Acceptance suite. Prints one PASS/FAIL line per criterion with its pinned
//! tolerance, then fails if any criterion failed.
//!
//! Run alone with `cargo test -p fbsde-filter --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fbsde_filter::filter::kalman::kalman_filter;
use fbsde_filter::filter::{run_filter, FilterConfig};
use fbsde_filter::harness::{run_rate_study, Axis, ConvergenceReport, RateConfig};
use fbsde_filter::kde::KernelDensity;
use fbsde_filter::learn::{asymptotic_factor, fit_from, hessian, hessian_mean, loss_and_gradients, TrainConfig};
use fbsde_filter::model::{simulate_truth, ModelRegistry, ObsQuadrature};
use fbsde_filter::predict::PredictConfig;
use fbsde_filter::rng::{Purpose, StreamRng, Streams};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rate(axis: Axis, model: &str, cfg: RateConfig, seed: u64) -> ConvergenceReport {
    let reg = ModelRegistry::default();
    run_rate_study(axis, reg.get(model).unwrap().as_ref(), &cfg, seed).unwrap()
}

fn slope_line(r: &ConvergenceReport) -> String {
    let pts: Vec<String> = r.points.iter().map(|p| format!("{}:{:.3e}", p.value, p.error)).collect();
    format!("slope {:.3} (95% ±{:.3}) [{}]", r.fit.slope, r.fit.half_width, pts.join(" "))
}

/// Parzen MSE at the origin of a standard normal: slope −4/5 (d=1) and
/// −2/3 (d=2), each ± 0.15; n ∈ {250, 1000, 4000, 16000}, 200 replications.
fn kde_rate() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (d, target) in [(1usize, -0.8), (2, -2.0 / 3.0)] {
        let cfg = RateConfig {
            kde_dim: d,
            ..RateConfig::default()
        };
        let r = rate(Axis::L, "linear1d", cfg, 101);
        let ok = (r.fit.slope - target).abs() <= 0.15;
        pass &= ok;
        detail.push(format!("d={d}: {} target {target:.3} ± 0.15", slope_line(&r)));
    }
    outcome(pass, detail.join("; "))
}

/// Left-point prediction MSE on the OU model: slope −1 ± 0.15 over
/// M ∈ {16, 64, 256, 1024}, 200 replications.
fn prediction_rate() -> Outcome {
    let r = rate(Axis::M, "ou1d", RateConfig::default(), 102);
    outcome((r.fit.slope + 1.0).abs() <= 0.15, format!("{} target -1 ± 0.15", slope_line(&r)))
}

/// Bayes denominator RMSE: slope −0.5 ± 0.1 over N ∈ {10², …, 10⁵}.
fn denominator_rate() -> Outcome {
    let r = rate(Axis::N, "linear1d", RateConfig::default(), 103);
    outcome((r.fit.slope + 0.5).abs() <= 0.1, format!("{} target -0.5 ± 0.1", slope_line(&r)))
}

/// Euler vs exact OU, strong RMSE at T = 1: slope ≥ 0.5; about 1 expected
/// for additive noise.
fn discretization_rate() -> Outcome {
    let r = rate(Axis::Dt, "ou1d", RateConfig::default(), 104);
    outcome(r.fit.slope >= 0.5, format!("{} required >= 0.5 (additive noise gives about 1)", slope_line(&r)))
}

fn random_kd(l: usize, d: usize, r: &mut StreamRng) -> KernelDensity {
    KernelDensity::new(
        d,
        (0..l * d).map(|_| r.random_range(-1.5..1.5)).collect(),
        (0..l).map(|_| r.random_range(-0.5..1.5)).collect(),
        (0..l).map(|_| r.random_range(0.3..1.5)).collect(),
    )
    .unwrap()
}

/// Shifts parameter `c` of `(α^1..α^L, λ^1..λ^L)` by `delta`.
fn perturbed(kd: &KernelDensity, c: usize, delta: f64) -> KernelDensity {
    let l = kd.len();
    let (mut alphas, mut lambdas) = (kd.weights().to_vec(), kd.bandwidths().to_vec());
    if c < l {
        alphas[c] += delta;
    } else {
        lambdas[c - l] += delta;
    }
    KernelDensity::new(kd.dim(), kd.centers().to_vec(), alphas, lambdas).unwrap()
}

/// Analytic gradients vs central differences (step 1e-6) on 100 random
/// instances with L ≤ 8, d ≤ 3: |fd − g| ≤ 1e-5·|g| + ε_fd, where
/// ε_fd = 8·eps·max(loss, 1)/step bounds the rounding error of the
/// difference quotient itself.
fn gradient_check() -> Outcome {
    let streams = Streams::new(105);
    let mut worst: f64 = 0.0;
    for inst in 0..100u64 {
        let mut r = streams.stream(Purpose::Test, 5, inst);
        let (l, d) = (r.random_range(1..=8), r.random_range(1..=3));
        let kd = random_kd(l, d, &mut r);
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
        let y = r.random_range(-0.5..2.0);
        let g = loss_and_gradients(&kd, &x, y, 0.0).unwrap();
        let loss = |k: &KernelDensity| (k.eval(&x) - y).powi(2);
        let step = 1e-6;
        for c in 0..2 * l {
            let (block, j) = (c / l, c % l);
            let fd = (loss(&perturbed(&kd, c, step)) - loss(&perturbed(&kd, c, -step))) / (2.0 * step);
            let an = if block == 0 { g.alpha[j] } else { g.lambda[j] };
            let noise = 8.0 * f64::EPSILON * g.loss.max(1.0) / step;
            worst = worst.max((fd - an).abs() / (an.abs() + noise / 1e-5));
        }
    }
    outcome(
        worst < 1e-5,
        format!("worst relative error {worst:.2e} over 100 instances (difference-quotient rounding allowed), required < 1e-5"),
    )
}

/// Asymptotic Hessian equals 2uuᵀ (max deviation < 1e-12 relative) with min
/// eigenvalue ≥ −1e-10‖H‖ on random parameters; the full Hessian at a fit
/// with loss < 1e-6 has min eigenvalue ≥ −1e-4‖H‖.
fn hessian_check() -> Outcome {
    let streams = Streams::new(106);
    let (mut worst_dev, mut worst_eig): (f64, f64) = (0.0, 0.0);
    for inst in 0..100u64 {
        let mut r = streams.stream(Purpose::Test, 6, inst);
        let (l, d) = (r.random_range(1..=8), r.random_range(1..=3));
        let kd = random_kd(l, d, &mut r);
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
        let h = hessian(&kd, &x, r.random_range(-0.5..2.0), true);
        let u = asymptotic_factor(&kd, &x);
        let scale = h.amax().max(f64::MIN_POSITIVE);
        worst_dev = worst_dev.max((&h - &u * u.transpose() * 2.0).amax() / scale);
        let min = h.clone().symmetric_eigen().eigenvalues.min();
        worst_eig = worst_eig.min(min / h.norm().max(f64::MIN_POSITIVE));
    }

    // realizable fit started near the truth
    let mut r = streams.stream(Purpose::Test, 6, 1000);
    let truth = KernelDensity::new(
        1,
        vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        (0..5).map(|_| r.random_range(0.1..0.6)).collect(),
        (0..5).map(|_| r.random_range(0.4..0.9)).collect(),
    )
    .unwrap();
    let xs: Vec<f64> = (0..200).map(|_| r.random_range(-3.0..3.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| truth.eval(&[*x])).collect();
    let start = KernelDensity::new(
        1,
        truth.centers().to_vec(),
        truth.weights().iter().map(|a| a * 1.02).collect(),
        truth.bandwidths().iter().map(|b| b * 0.98).collect(),
    )
    .unwrap();
    let cfg = TrainConfig {
        sgd_steps: 20_000,
        ..TrainConfig::default()
    };
    let (fit, report) = fit_from(start, &xs, &ys, &cfg, 1e-3, &mut r).unwrap();
    let h = hessian_mean(&fit, &xs, &ys, false);
    let full_min = h.clone().symmetric_eigen().eigenvalues.min() / h.norm();
    let pass = worst_dev < 1e-12 && worst_eig >= -1e-10 && report.final_loss < 1e-6 && full_min >= -1e-4;
    outcome(
        pass,
        format!(
            "asymptotic: max |H - 2uu^T| / max|H| = {worst_dev:.1e} (< 1e-12), min eig / |H| = {worst_eig:.1e} (>= -1e-10); \
             full at loss {:.1e} (< 1e-6): min eig / |H| = {full_min:.1e} (>= -1e-4)",
            report.final_loss
        ),
    )
}

/// Linear-Gaussian 1D, K=10, N=2000, M=64, L=32, S=4000: for every step the
/// median over 20 seeds of |FBSDE mean − Kalman mean| / Kalman std is < 0.1.
fn kalman_equivalence() -> Outcome {
    let reg = ModelRegistry::default();
    let model = reg.get("linear1d").unwrap();
    let lg = model.linear_gaussian().unwrap();
    let cfg = FilterConfig {
        particles: 2000,
        centers: 32,
        steps: 10,
        predict: PredictConfig {
            mc_samples: 64,
            ..PredictConfig::default()
        },
        train: TrainConfig {
            sgd_steps: 4000,
            ..TrainConfig::default()
        },
        ..FilterConfig::default()
    };
    let grid = cfg.grid().unwrap();
    let mut gaps = vec![Vec::new(); cfg.steps + 1];
    for seed in 0..20u64 {
        let truth = simulate_truth(model.as_ref(), &grid, &Streams::new(1000 + seed), ObsQuadrature::Right).unwrap();
        let kf = kalman_filter(&lg, &grid, &truth.observations).unwrap();
        let states = run_filter(model.as_ref(), &FilterConfig { seed, ..cfg.clone() }, &truth.observations).unwrap();
        for k in 1..=cfg.steps {
            let mean = states[k].posterior_mean(model.as_ref())[0];
            gaps[k].push((mean - kf[k].0[0]).abs() / kf[k].1[(0, 0)].sqrt());
        }
    }
    let medians: Vec<f64> = gaps[1..]
        .iter_mut()
        .map(|g| {
            g.sort_by(f64::total_cmp);
            0.5 * (g[9] + g[10])
        })
        .collect();
    let worst = medians.iter().copied().fold(0.0, f64::max);
    let list: Vec<String> = medians.iter().map(|m| format!("{m:.3}")).collect();
    outcome(worst < 0.1, format!("per-step median gaps [{}], worst {worst:.3}, required < 0.1", list.join(" ")))
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// `filter`, `rates` and `diagnose` runs with 1 and 8 worker threads write
/// byte-identical output trees.
fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_fbsde-filter");
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, "seed = 7\n[rates]\nreplications = 50\n[diagnose]\nsamples = 20000\n").unwrap();
    let runs: [&[&str]; 3] = [
        &["filter", "--model", "linear1d"],
        &["rates", "--model", "ou1d", "--axis", "M"],
        &["diagnose", "--model", "linear1d"],
    ];
    let mut files = 0;
    let mut mismatched = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let mut trees = Vec::new();
        for threads in ["1", "8"] {
            let out = tmp.path().join(format!("run{i}_t{threads}"));
            let status = Command::new(bin)
                .args(*args)
                .arg("--config")
                .arg(&config)
                .arg("--threads")
                .arg(threads)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            if !status.status.success() {
                return outcome(false, format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            trees.push(read_tree(&out));
        }
        files += trees[0].len();
        if trees[0] != trees[1] {
            mismatched.push(args[0]);
        }
    }
    outcome(
        mismatched.is_empty() && files > 0,
        format!("{files} files compared across 1 and 8 threads; mismatched runs: {mismatched:?}"),
    )
}

#[test]
fn acceptance() {
    type Criterion = (usize, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        (1, "KDE MSE rate", kde_rate),
        (2, "prediction MC rate", prediction_rate),
        (3, "Bayes denominator rate", denominator_rate),
        (4, "discretization rate", discretization_rate),
        (5, "gradient correctness", gradient_check),
        (6, "asymptotic Hessian PSD", hessian_check),
        (7, "Kalman equivalence", kalman_equivalence),
        (8, "thread-count determinism", determinism),
    ];
    let mut all = true;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let o = run();
        all &= o.pass;
        println!(
            "criterion {id} {}: {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    // No experimental numbers exist to reproduce; acceptance rests on the
    // criteria above plus the per-module property suites.
    println!(
        "criterion 9 {}: no reported experiments to reproduce; holds when criteria 1-8 pass (module property suites run with the unit tests)",
        if all { "PASS" } else { "FAIL" }
    );
    assert!(all, "acceptance criteria failed");
}
