//! Empirical convergence rates along one discretization axis at a time.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::{denominator_quadrature, left_point_limit};
use super::slope::{fit_loglog_slope, SlopeFit};
use crate::bayes::{denominator_mc, Likelihood};
use crate::error::{Error, Result};
use crate::kde::{parzen_estimate, BandwidthSpec};
use crate::predict::{predict_value_left_point, ParticleCloud, PredictConfig, PredictVariant, Stage};
use crate::rng::{Purpose, Streams};
use crate::model::StateSpaceModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    L,
    M,
    N,
    #[serde(rename = "dt")]
    Dt,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::L, Axis::M, Axis::N, Axis::Dt];

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Axis::L => vec![250.0, 1000.0, 4000.0, 16000.0],
            Axis::M => vec![16.0, 64.0, 256.0, 1024.0],
            Axis::N => vec![1e2, 1e3, 1e4, 1e5],
            Axis::Dt => vec![0.0125, 0.025, 0.05, 0.1],
        }
    }

    pub fn statistic(self) -> Statistic {
        match self {
            Axis::L | Axis::M => Statistic::Mse,
            Axis::N | Axis::Dt => Statistic::Rmse,
        }
    }

    fn code(self) -> u64 {
        match self {
            Axis::L => 1,
            Axis::M => 2,
            Axis::N => 3,
            Axis::Dt => 4,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::L => "L",
            Axis::M => "M",
            Axis::N => "N",
            Axis::Dt => "dt",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Axis::L),
            "M" => Ok(Axis::M),
            "N" => Ok(Axis::N),
            "dt" => Ok(Axis::Dt),
            other => Err(Error::config(format!("unknown axis {other:?}; expected L, M, N or dt"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mse,
    Rmse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    /// Sweep values; the axis default when absent.
    pub grid: Option<Vec<f64>>,
    pub replications: usize,
    /// Dimension of the standard-normal target in the L-axis study.
    pub kde_dim: usize,
    /// Base M while L is swept. Must be at least `⌈L_max^{4/(4+d)}⌉` so that
    /// the M error stays below the L error across the sweep.
    pub base_mc_samples: usize,
    /// Step used by the one-step M and N studies.
    pub dt: f64,
    /// Horizon of the dt-axis path comparison.
    pub horizon: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            grid: None,
            replications: 200,
            kde_dim: 1,
            base_mc_samples: 4096,
            dt: 0.1,
            horizon: 1.0,
        }
    }
}

/// Nodes of the L¹ density-error grid in the M-axis study.
const L1_NODES: usize = 129;

/// Smallest base M admitted for an L sweep up to `l_max` in `d` dimensions.
pub fn m_floor(l_max: f64, d: usize) -> usize {
    l_max.powf(4.0 / (4.0 + d as f64)).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub value: f64,
    /// MSE or RMSE, per the report's statistic.
    pub error: f64,
    pub std_error: f64,
    /// Squared error of every replication.
    pub squared_errors: Vec<f64>,
    /// Mean L¹ distance to the oracle density on its grid (M axis only);
    /// reported alongside, never fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub axis: Axis,
    pub statistic: Statistic,
    pub model: String,
    pub dim: usize,
    pub replications: usize,
    pub seed: u64,
    pub points: Vec<RatePoint>,
    pub fit: SlopeFit,
    pub theoretical_slope: f64,
    /// Estimate of `sup |div g|` for model-based studies.
    pub divergence_bound: Option<f64>,
    pub recurrence: Option<f64>,
    pub note: String,
}

impl ConvergenceReport {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Refits the slope from the stored replication data.
    pub fn refit(&self) -> Result<SlopeFit> {
        let ys: Vec<f64> = self.points.iter().map(|p| summarize(&p.squared_errors, self.statistic).0).collect();
        fit_loglog_slope(&self.grid(), &ys)
    }

    /// CSV with header `value,replication,squared_error`.
    pub fn write_raw_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "replication", "squared_error"])?;
        for p in &self.points {
            for (r, e) in p.squared_errors.iter().enumerate() {
                w.write_record([p.value.to_string(), r.to_string(), e.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// (statistic, standard error) of a set of squared errors.
fn summarize(squared: &[f64], stat: Statistic) -> (f64, f64) {
    let n = squared.len() as f64;
    let mse = squared.iter().sum::<f64>() / n;
    let var = squared.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    match stat {
        Statistic::Mse => (mse, se),
        // delta method
        Statistic::Rmse => (mse.sqrt(), se / (2.0 * mse.sqrt()).max(f64::MIN_POSITIVE)),
    }
}

fn validate_grid(grid: &[f64], replications: usize) -> Result<()> {
    if grid.len() < 4 {
        return Err(Error::config(format!("rate grid needs at least 4 points, got {}", grid.len())));
    }
    if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("rate grid must be positive and strictly increasing"));
    }
    if replications < 50 {
        return Err(Error::config(format!("slope claims need at least 50 replications, got {replications}")));
    }
    Ok(())
}

fn require_integer(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && (v - v.round()).abs() < 1e-9 {
        Ok(v.round() as usize)
    } else {
        Err(Error::config(format!("{what} must be a positive integer, got {v}")))
    }
}

/// Sweeps `axis` and fits the log-log slope of its error statistic.
///
/// * L: Parzen estimate of a `kde_dim`-dimensional standard normal at the
///   origin from n samples (the swept value), theorem bandwidth; MSE.
/// * M: left-point one-step prediction of the model's `p_0` at probes
///   mean ± {0,1,2} std against its quadrature limit; MSE averaged over probes.
/// * N: Monte-Carlo Bayes denominator from N exact `p_0` draws against
///   quadrature; RMSE.
/// * dt: Euler path of a scalar linear model at the horizon against the exact
///   Ornstein–Uhlenbeck solution driven by the same Brownian path; RMSE.
pub fn run_rate_study(axis: Axis, model: &dyn StateSpaceModel, cfg: &RateConfig, seed: u64) -> Result<ConvergenceReport> {
    let grid = cfg.grid.clone().unwrap_or_else(|| axis.default_grid());
    validate_grid(&grid, cfg.replications)?;
    let streams = Streams::new(seed);
    let mut l1_errors: Option<Vec<f64>> = None;
    let (squared, dim, theoretical, bound, note): (Vec<Vec<f64>>, usize, f64, Option<f64>, String) = match axis {
        Axis::L => {
            let d = cfg.kde_dim;
            if d == 0 || d > 3 {
                return Err(Error::config("L-axis study supports 1 <= d <= 3"));
            }
            let floor = m_floor(grid[grid.len() - 1], d);
            if cfg.base_mc_samples < floor {
                return Err(Error::config(format!(
                    "base M = {} is below the floor {floor} for an L sweep up to {}: M must be taken to its limit before L",
                    cfg.base_mc_samples,
                    grid[grid.len() - 1]
                )));
            }
            let mut sq = Vec::new();
            for (j, &v) in grid.iter().enumerate() {
                let n = require_integer(v, "L-axis value")?;
                sq.push(replicate(cfg.replications, |r| {
                    kde_squared_error(d, n, &mut streams.stream(Purpose::Replication, axis.code() << 32 | j as u64, r))
                })?);
            }
            let m = 2.0;
            let note = "Parzen estimate of a standard normal at the origin".to_string();
            (sq, d, -2.0 * m / (2.0 * m + d as f64), None, note)
        }
        Axis::M => {
            let probes = probes_1d(model)?;
            let t_k = cfg.dt;
            let prev = |x: &[f64]| model.initial_density(x);
            let oracle: Vec<f64> = probes
                .iter()
                .map(|x| left_point_limit(model, &prev, t_k, *x, cfg.dt))
                .collect::<Result<_>>()?;
            let (mean, sd) = moments_1d(model)?;
            let (lo, hi) = (mean - 5.0 * sd, mean + 5.0 * sd);
            let h = (hi - lo) / (L1_NODES - 1) as f64;
            let nodes: Vec<f64> = (0..L1_NODES).map(|i| lo + h * i as f64).collect();
            let oracle_grid: Vec<f64> = nodes
                .iter()
                .map(|x| left_point_limit(model, &prev, t_k, *x, cfg.dt))
                .collect::<Result<_>>()?;
            let mut sq = Vec::new();
            let mut l1 = Vec::new();
            for (j, &v) in grid.iter().enumerate() {
                let pcfg = PredictConfig {
                    mc_samples: require_integer(v, "M-axis value")?,
                    variant: PredictVariant::LeftPoint,
                    decouple_mc: false,
                };
                sq.push(replicate(cfg.replications, |r| {
                    let mut rng = streams.stream(Purpose::Replication, axis.code() << 32 | j as u64, r);
                    let mut total = 0.0;
                    for (x, o) in probes.iter().zip(&oracle) {
                        let est = predict_value_left_point(&prev, model, t_k, &[*x], cfg.dt, &pcfg, &mut rng)?;
                        total += (est - o).powi(2);
                    }
                    Ok(total / probes.len() as f64)
                })?);
                // separate streams, so the MSE data do not depend on this
                let dists = replicate(cfg.replications, |r| {
                    let mut rng = streams.stream(Purpose::Replication, axis.code() << 32 | 1 << 16 | j as u64, r);
                    let mut diffs = Vec::with_capacity(L1_NODES);
                    for (x, o) in nodes.iter().zip(&oracle_grid) {
                        diffs.push((predict_value_left_point(&prev, model, t_k, &[*x], cfg.dt, &pcfg, &mut rng)? - o).abs());
                    }
                    Ok(h * (diffs.iter().sum::<f64>() - 0.5 * (diffs[0] + diffs[L1_NODES - 1])))
                })?;
                l1.push(dists.iter().sum::<f64>() / dists.len() as f64);
            }
            l1_errors = Some(l1);
            let note = "left-point prediction of p_0 against its quadrature limit; l1_error is the mean L1 density error over mean ± 5 std".to_string();
            (sq, 1, -1.0, Some(divergence_estimate(model, &streams)), note)
        }
        Axis::N => {
            let (mean, sd) = moments_1d(model)?;
            let mut h = vec![0.0; model.dim_obs()];
            model.obs_map(&[mean], &mut h);
            let obs_now: Vec<f64> = h.iter().map(|v| v * cfg.dt).collect();
            let obs_prev = vec![0.0; model.dim_obs()];
            let lik = Likelihood::new(model, cfg.dt, cfg.dt, &obs_prev, &obs_now)?;
            let prior = |x: &[f64]| model.initial_density(x);
            let oracle = denominator_quadrature(&lik, &prior, mean - 10.0 * sd, mean + 10.0 * sd);
            let mut sq = Vec::new();
            for (j, &v) in grid.iter().enumerate() {
                let n = require_integer(v, "N-axis value")?;
                sq.push(replicate(cfg.replications, |r| {
                    let mut rng = streams.stream(Purpose::Replication, axis.code() << 32 | j as u64, r);
                    let locations: Vec<f64> = (0..n).flat_map(|_| model.sample_initial(&mut rng)).collect();
                    let cloud = ParticleCloud::new(1, 1, locations, vec![0.0; n], Stage::Prior)?;
                    Ok((denominator_mc(&cloud, &lik)? - oracle).powi(2))
                })?);
            }
            let note = "Bayes denominator from exact p_0 draws against quadrature".to_string();
            (sq, 1, -0.5, None, note)
        }
        Axis::Dt => {
            let lg = model
                .linear_gaussian()
                .filter(|lg| lg.drift.shape() == (1, 1) && lg.diffusion.shape() == (1, 1))
                .ok_or_else(|| {
                    Error::config(format!("dt-axis oracle needs a scalar linear model, got {:?}", model.name()))
                })?;
            let (a, sigma) = (lg.drift[(0, 0)], lg.diffusion[(0, 0)]);
            let fine = grid[0];
            let ratios: Vec<usize> = grid
                .iter()
                .map(|v| require_integer(v / fine, "dt grid ratio to the finest step"))
                .collect::<Result<_>>()?;
            let n_fine = require_integer(cfg.horizon / fine, "horizon / finest dt")?;
            if ratios.iter().any(|r| n_fine % r != 0) {
                return Err(Error::config("every dt must divide the horizon"));
            }
            let per_rep: Vec<Vec<f64>> = (0..cfg.replications as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = streams.stream(Purpose::Replication, axis.code() << 32, r);
                    let x0 = model.sample_initial(&mut rng)[0];
                    path_errors(a, sigma, x0, fine, n_fine, &ratios, &mut rng)
                })
                .collect();
            let sq = (0..grid.len()).map(|j| per_rep.iter().map(|e| e[j]).collect()).collect();
            let note = "Euler vs exact OU at the horizon; the Euler bound is slope 0.5, additive noise gives about 1"
                .to_string();
            (sq, 1, 1.0, Some(a.abs()), note)
        }
    };
    let stat = axis.statistic();
    let points: Vec<RatePoint> = grid
        .iter()
        .zip(squared)
        .enumerate()
        .map(|(j, (&value, sq))| {
            let (error, std_error) = summarize(&sq, stat);
            RatePoint {
                value,
                error,
                std_error,
                squared_errors: sq,
                l1_error: l1_errors.as_ref().map(|l| l[j]),
            }
        })
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error).collect();
    let fit = fit_loglog_slope(&grid, &ys)?;
    Ok(ConvergenceReport {
        axis,
        statistic: stat,
        model: if axis == Axis::L { "standard-normal".into() } else { model.name().to_string() },
        dim,
        replications: cfg.replications,
        seed,
        points,
        fit,
        theoretical_slope: theoretical,
        divergence_bound: bound,
        recurrence: None,
        note,
    })
}

fn replicate(reps: usize, f: impl Fn(u64) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    (0..reps as u64).into_par_iter().map(&f).collect()
}

fn kde_squared_error(d: usize, n: usize, rng: &mut crate::rng::StreamRng) -> Result<f64> {
    let peak = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0);
    let samples: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let spec = BandwidthSpec::gaussian(d, n, peak, 1.0);
    let est = parzen_estimate(&samples, &spec, &vec![0.0; d])?;
    Ok((est - peak).powi(2))
}

fn moments_1d(model: &dyn StateSpaceModel) -> Result<(f64, f64)> {
    if model.dim_state() != 1 {
        return Err(Error::config(format!("oracle needs a scalar model, {:?} is not", model.name())));
    }
    let (m, c) = model
        .initial_moments()
        .ok_or_else(|| Error::config(format!("oracle needs the analytic p_0 moments of {:?}", model.name())))?;
    Ok((m[0], c[(0, 0)].sqrt()))
}

fn probes_1d(model: &dyn StateSpaceModel) -> Result<Vec<f64>> {
    let (m, s) = moments_1d(model)?;
    Ok([-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|c| m + c * s).collect())
}

/// `sup |div g|` when the model knows it, else the max over 1000 `p_0` draws.
pub fn divergence_estimate(model: &dyn StateSpaceModel, streams: &Streams) -> f64 {
    model.divergence_bound().unwrap_or_else(|| {
        let mut rng = streams.stream(Purpose::Diagnostic, 0, 0);
        (0..1000)
            .map(|_| model.drift_divergence(&model.sample_initial(&mut rng)).abs())
            .fold(0.0, f64::max)
    })
}

/// Squared horizon error of Euler paths with steps `ratio · h` against the
/// exact solution of `dX = aX dt + σ dW` sampled on the fine grid `h`.
fn path_errors<R: Rng>(a: f64, sigma: f64, x0: f64, h: f64, n_fine: usize, ratios: &[usize], rng: &mut R) -> Vec<f64> {
    // Over one fine interval, ΔW and I = ∫ e^{a(h−s)} dW_s are jointly normal.
    let (var_i, cov) = if a == 0.0 {
        (h, h)
    } else {
        ((2.0 * a * h).exp_m1() / (2.0 * a), (a * h).exp_m1() / a)
    };
    let cond_sd = (var_i - cov * cov / h).max(0.0).sqrt();
    let decay = (a * h).exp();
    let mut exact = x0;
    let mut euler = vec![x0; ratios.len()];
    let mut acc = vec![0.0; ratios.len()];
    for step in 1..=n_fine {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let dw = h.sqrt() * z1;
        let i = cov / h * dw + cond_sd * z2;
        exact = decay * exact + sigma * i;
        for (j, &r) in ratios.iter().enumerate() {
            acc[j] += dw;
            if step % r == 0 {
                let dt = r as f64 * h;
                euler[j] += a * euler[j] * dt + sigma * acc[j];
                acc[j] = 0.0;
            }
        }
    }
    euler.iter().map(|e| (e - exact).powi(2)).collect()
}
