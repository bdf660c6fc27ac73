//! End-to-end runs that write their artifacts to an output directory.
//!
//! Files written by [`run_experiment`]:
//! * `truth.csv`: `k,t,x1..,o1..`
//! * `summary.csv`: per step the truth and each filter's mean and std
//! * `errors.csv`: per step absolute errors against the truth and the
//!   FBSDE-to-reference gap in reference standard deviations
//! * `diagnostics.json`: per-step filter diagnostics and RMSE summary
//! * `checkpoints/`: learned density, particle table, diagnostics and SGD
//!   loss trace per step

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::oracle::GridFilter;
use super::rates::{run_rate_study, Axis, ConvergenceReport};
use super::recurrence::{estimate_recurrence_coefficient, RecurrenceEstimate};
use crate::error::Result;
use crate::filter::bootstrap::bootstrap_pf;
use crate::filter::kalman::kalman_filter;
use crate::filter::{run_filter_with, write_checkpoint, StepDiagnostics};
use crate::model::{simulate_truth, ModelRegistry, StateSpaceModel, TimeGrid, Trajectory};
use crate::rng::Streams;

pub struct Simulation {
    pub model: Arc<dyn StateSpaceModel>,
    pub grid: TimeGrid,
    pub truth: Trajectory,
}

pub fn simulate(cfg: &ExperimentConfig, registry: &ModelRegistry) -> Result<Simulation> {
    cfg.validate()?;
    let model = registry.get(&cfg.model)?;
    let grid = cfg.filter.grid()?;
    let truth = simulate_truth(model.as_ref(), &grid, &Streams::new(cfg.seed), cfg.observation_quadrature)?;
    Ok(Simulation { model, grid, truth })
}

pub fn write_truth<W: Write>(truth: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (d, dy) = (truth.states[0].len(), truth.observations[0].len());
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    header.extend((1..=dy).map(|j| format!("o{j}")));
    w.write_record(&header)?;
    for k in 0..truth.times.len() {
        let mut row = vec![k.to_string(), truth.times[k].to_string()];
        row.extend(truth.states[k].iter().map(|v| v.to_string()));
        row.extend(truth.observations[k].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step mean and per-coordinate variance of one method.
type Track = Vec<(Vec<f64>, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub model: String,
    /// "kalman", "grid" or absent.
    pub reference: Option<String>,
    pub rmse_fbsde: f64,
    pub rmse_bootstrap: Option<f64>,
    pub rmse_reference: Option<f64>,
    /// Max over steps and coordinates of |FBSDE mean − reference mean| / reference std.
    pub max_reference_gap: Option<f64>,
}

#[derive(Serialize)]
struct DiagnosticsFile<'a> {
    summary: &'a ExperimentSummary,
    steps: Vec<StepDiagnostics>,
}

fn rmse(track: &Track, truth: &Trajectory) -> f64 {
    let k = track.len();
    let total: f64 = (1..k)
        .map(|i| track[i].0.iter().zip(&truth.states[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    (total / (k - 1).max(1) as f64).sqrt()
}

fn cell(track: Option<&Track>, k: usize, j: usize, second: bool) -> String {
    match track {
        Some(t) if second => t[k].1[j].sqrt().to_string(),
        Some(t) => t[k].0[j].to_string(),
        None => String::new(),
    }
}

/// Simulates the truth, runs the FBSDE filter and the baselines, writes the
/// artifact bundle to `out`.
pub fn run_experiment(cfg: &ExperimentConfig, registry: &ModelRegistry, out: &Path) -> Result<ExperimentSummary> {
    let Simulation { model, grid, truth } = simulate(cfg, registry)?;
    let model = model.as_ref();
    fs::create_dir_all(out)?;
    write_truth(&truth, fs::File::create(out.join("truth.csv"))?)?;

    let fcfg = cfg.filter_config();
    let dir = out.join("checkpoints");
    let states = run_filter_with(model, &fcfg, &truth.observations, |s| {
        if cfg.checkpoints {
            write_checkpoint(s, &dir)?;
            if let Some(loss) = &s.loss {
                loss.write_csv(fs::File::create(dir.join(format!("loss_{:03}.csv", s.k)))?)?;
            }
        }
        Ok(())
    })?;
    let fbsde: Track = states
        .iter()
        .map(|s| (s.posterior_mean(model), s.posterior_variance(model)))
        .collect();

    let streams = Streams::new(cfg.seed);
    let bootstrap: Option<Track> = if cfg.baselines.bootstrap {
        let n = cfg.baselines.bootstrap_particles.unwrap_or(fcfg.particles);
        let pf = bootstrap_pf(model, &grid, &truth.observations, n, &streams)?;
        Some(pf.iter().map(|s| (s.mean(), s.variance())).collect())
    } else {
        None
    };

    let (reference_name, reference): (Option<String>, Option<Track>) = if let Some(lg) = model.linear_gaussian() {
        let kf = kalman_filter(&lg, &grid, &truth.observations)?;
        let track = kf
            .iter()
            .map(|(m, c)| (m.iter().copied().collect(), c.diagonal().iter().copied().collect()))
            .collect();
        (Some("kalman".into()), Some(track))
    } else if model.dim_state() == 1 && model.dim_noise() == 1 {
        let (m0, sd0) = model
            .initial_moments()
            .map(|(m, c)| (m[0], c[(0, 0)].sqrt()))
            .unwrap_or((truth.states[0][0], 1.0));
        let spread = truth.states.iter().map(|x| (x[0] - m0).abs()).fold(0.0, f64::max);
        let half = 8.0 * sd0.max(0.5) + spread;
        let mut gf = GridFilter::new(model, m0 - half, m0 + half)?;
        let mut track = vec![(vec![gf.mean()], vec![gf.variance()])];
        for k in 1..=grid.steps() {
            gf.step(model, &grid, k, &truth.observations[k - 1], &truth.observations[k])?;
            track.push((vec![gf.mean()], vec![gf.variance()]));
        }
        (Some("grid".into()), Some(track))
    } else {
        (None, None)
    };

    let d = model.dim_state();
    let mut summary_csv = csv::Writer::from_writer(fs::File::create(out.join("summary.csv"))?);
    let mut header = vec!["k".to_string(), "t".to_string()];
    for j in 1..=d {
        for col in [
            "truth",
            "fbsde_mean",
            "fbsde_std",
            "reference_mean",
            "reference_std",
            "bootstrap_mean",
            "bootstrap_std",
        ] {
            header.push(format!("{col}_x{j}"));
        }
    }
    summary_csv.write_record(&header)?;
    let mut errors_csv = csv::Writer::from_writer(fs::File::create(out.join("errors.csv"))?);
    errors_csv.write_record(["k", "fbsde_error", "bootstrap_error", "reference_error", "fbsde_reference_gap"])?;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut max_gap: f64 = 0.0;
    for k in 0..=grid.steps() {
        let mut row = vec![k.to_string(), grid.time(k).to_string()];
        for j in 0..d {
            row.push(truth.states[k][j].to_string());
            row.push(fbsde[k].0[j].to_string());
            row.push(fbsde[k].1[j].sqrt().to_string());
            row.push(cell(reference.as_ref(), k, j, false));
            row.push(cell(reference.as_ref(), k, j, true));
            row.push(cell(bootstrap.as_ref(), k, j, false));
            row.push(cell(bootstrap.as_ref(), k, j, true));
        }
        summary_csv.write_record(&row)?;
        let gap = reference.as_ref().map(|r| {
            (0..d)
                .map(|j| (fbsde[k].0[j] - r[k].0[j]).abs() / r[k].1[j].sqrt())
                .fold(0.0, f64::max)
        });
        if let Some(g) = gap {
            max_gap = max_gap.max(g);
        }
        errors_csv.write_record([
            k.to_string(),
            dist(&fbsde[k].0, &truth.states[k]).to_string(),
            bootstrap.as_ref().map(|b| dist(&b[k].0, &truth.states[k]).to_string()).unwrap_or_default(),
            reference.as_ref().map(|r| dist(&r[k].0, &truth.states[k]).to_string()).unwrap_or_default(),
            gap.map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    summary_csv.flush()?;
    errors_csv.flush()?;

    let summary = ExperimentSummary {
        model: cfg.model.clone(),
        rmse_fbsde: rmse(&fbsde, &truth),
        rmse_bootstrap: bootstrap.as_ref().map(|b| rmse(b, &truth)),
        rmse_reference: reference.as_ref().map(|r| rmse(r, &truth)),
        max_reference_gap: reference.as_ref().map(|_| max_gap),
        reference: reference_name,
    };
    let file = DiagnosticsFile {
        summary: &summary,
        steps: states.iter().filter_map(|s| s.diagnostics).collect(),
    };
    let mut f = fs::File::create(out.join("diagnostics.json"))?;
    serde_json::to_writer_pretty(&mut f, &file)?;
    writeln!(f)?;
    Ok(summary)
}

/// Runs one rate study and writes `rates_<axis>.json` (full report) and
/// `rates_<axis>.csv` (raw squared errors).
pub fn run_rates(cfg: &ExperimentConfig, registry: &ModelRegistry, axis: Axis, out: &Path) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let model = registry.get(&cfg.model)?;
    let report = run_rate_study(axis, model.as_ref(), &cfg.rates, cfg.seed)?;
    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join(format!("rates_{axis}.json")))?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    writeln!(f)?;
    report.write_raw_csv(fs::File::create(out.join(format!("rates_{axis}.csv")))?)?;
    Ok(report)
}

/// Simulates the truth and writes `recurrence.json`.
pub fn run_diagnose(cfg: &ExperimentConfig, registry: &ModelRegistry, out: &Path) -> Result<RecurrenceEstimate> {
    let Simulation { model, grid, truth } = simulate(cfg, registry)?;
    let est = estimate_recurrence_coefficient(
        model.as_ref(),
        &grid,
        &truth.observations,
        cfg.diagnose.samples,
        &Streams::new(cfg.seed),
    )?;
    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join("recurrence.json"))?;
    serde_json::to_writer_pretty(&mut f, &est)?;
    writeln!(f)?;
    Ok(est)
}
