//! Prior density values at forward-propagated particles.
//!
//! Each particle is pushed forward by Euler–Maruyama, then M backward samples
//! from its new location give a Monte-Carlo estimate of the conditional
//! expectation of the previous density. The drift-divergence correction is
//! applied either implicitly (right point, fixed-point iteration) or
//! explicitly inside the expectation (left point).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::DensityFn;
use crate::model::{shift_into, StateSpaceModel, TimeGrid};
use crate::rng::{fill_normal, Purpose, StreamRng, Streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prior,
    Posterior,
}

/// Particle locations with one density value each.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    pub k: usize,
    pub dim: usize,
    /// Row-major `N × dim`.
    pub locations: Vec<f64>,
    pub values: Vec<f64>,
    /// Stream key of each particle. Travels with the particle so that a
    /// permuted cloud draws the same noise per particle.
    pub ids: Vec<u64>,
    pub stage: Stage,
}

impl ParticleCloud {
    pub fn new(k: usize, dim: usize, locations: Vec<f64>, values: Vec<f64>, stage: Stage) -> Result<Self> {
        let n = values.len();
        if dim == 0 || locations.len() != n * dim {
            return Err(Error::config(format!(
                "particle cloud: {} coordinates for {n} particles of dim {dim}",
                locations.len()
            )));
        }
        Ok(Self {
            k,
            dim,
            locations,
            values,
            ids: (0..n as u64).collect(),
            stage,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.locations[i * self.dim..(i + 1) * self.dim]
    }

    /// Reorders particles so that new position `j` holds old particle `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.locations = perm.iter().flat_map(|&i| self.location(i).iter().copied()).collect();
        out.values = perm.iter().map(|&i| self.values[i]).collect();
        out.ids = perm.iter().map(|&i| self.ids[i]).collect();
        out
    }

    pub fn mean_location(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (a, b) in m.iter_mut().zip(self.location(i)) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictVariant {
    /// Implicit drift-divergence term solved by fixed-point iteration.
    #[default]
    RightPointFixedPoint,
    /// Explicit drift-divergence term inside the conditional expectation.
    LeftPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Backward samples per particle (and fixed-point iterations).
    pub mc_samples: usize,
    pub variant: PredictVariant,
    /// Use the full M-sample average in every fixed-point iterate instead of
    /// the running average over the first m samples.
    pub decouple_mc: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            mc_samples: 64,
            variant: PredictVariant::RightPointFixedPoint,
            decouple_mc: false,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::config("M (mc_samples) must be at least 1"));
        }
        Ok(())
    }
}

/// Verdict of the `dt · sup|div g| < 0.5` contraction guard.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Contraction {
    Satisfied { factor: f64 },
    Unknown,
}

/// Checks the fixed-point contraction guard for `dt`. Models without a known
/// divergence bound only get a warning.
pub fn contraction_guard<M: StateSpaceModel + ?Sized>(model: &M, dt: f64) -> Result<Contraction> {
    match model.divergence_bound() {
        Some(bound) => {
            let factor = dt * bound;
            if factor < 0.5 {
                Ok(Contraction::Satisfied { factor })
            } else {
                Err(Error::config(format!(
                    "dt * sup|div g| = {factor} >= 0.5: fixed-point iteration may not contract; reduce dt"
                )))
            }
        }
        None => {
            log::warn!(
                "model {:?} has no divergence bound; fixed-point contraction at dt={dt} is unchecked",
                model.name()
            );
            Ok(Contraction::Unknown)
        }
    }
}

/// Draws the M backward samples from `x_k` and evaluates `f` (and optionally
/// the drift divergence) at each, in draw order.
fn backward_evaluations<M: StateSpaceModel + ?Sized>(
    f: &dyn DensityFn,
    model: &M,
    sigma: &DMatrix<f64>,
    x_k: &[f64],
    dt: f64,
    m: usize,
    with_divergence: bool,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(Error::config("M must be at least 1"));
    }
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be non-negative, got {dt}")));
    }
    let mut dw = vec![0.0; model.dim_noise()];
    let mut xb = vec![0.0; model.dim_state()];
    let mut values = Vec::with_capacity(m);
    let mut divs = Vec::with_capacity(if with_divergence { m } else { 0 });
    for j in 0..m {
        fill_normal(rng, dt, &mut dw);
        shift_into(model, sigma, x_k, dt, -1.0, &dw, &mut xb);
        let v = f.value(&xb);
        if !v.is_finite() {
            return Err(Error::NonFiniteDensity {
                sample: j,
                state: xb.clone(),
            });
        }
        values.push(v);
        if with_divergence {
            divs.push(model.drift_divergence(&xb));
        }
    }
    Ok((values, divs))
}

/// `(1/M) Σ_j f(x_k − g(x_k) dt + σ_{t_k} dW_j)`.
pub fn mc_conditional_expectation<M: StateSpaceModel + ?Sized>(
    f: &dyn DensityFn,
    model: &M,
    t_k: f64,
    x_k: &[f64],
    dt: f64,
    m: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    let sigma = model.diffusion(t_k);
    let (values, _) = backward_evaluations(f, model, &sigma, x_k, dt, m, false, rng)?;
    Ok(values.iter().sum::<f64>() / m as f64)
}

/// `10^6` times the largest previous-density value known: the local samples
/// and, when the caller has it, the density's peak over the whole cloud.
fn divergence_limit(scale: f64, y0: f64, values: &[f64]) -> f64 {
    let peak = values.iter().fold(y0.abs().max(scale), |a, v| a.max(v.abs()));
    1e6 * peak
}

/// Fixed-point iteration `Ỹ^m = Ê_m − div(x_k) Ỹ^{m−1} dt`, `Ỹ^0 = f(x_k)`.
///
/// `Ê_m` is the running average of the first m backward samples, or the full
/// M-sample average when `cfg.decouple_mc` is set. Returns `Ỹ^M` unclamped.
pub fn predict_value_right_point<M: StateSpaceModel + ?Sized>(
    prev_density: &dyn DensityFn,
    model: &M,
    t_k: f64,
    x_k: &[f64],
    dt: f64,
    cfg: &PredictConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    let sigma = model.diffusion(t_k);
    right_point_with(prev_density, model, &sigma, x_k, dt, 0.0, cfg, rng).map(|it| it.value)
}

/// Result of a fixed-point solve with its iterate trace (`Ỹ^0..Ỹ^M`).
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub value: f64,
    pub iterates: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn right_point_with<M: StateSpaceModel + ?Sized>(
    prev_density: &dyn DensityFn,
    model: &M,
    sigma: &DMatrix<f64>,
    x_k: &[f64],
    dt: f64,
    scale: f64,
    cfg: &PredictConfig,
    rng: &mut StreamRng,
) -> Result<FixedPoint> {
    let m = cfg.mc_samples;
    let (values, _) = backward_evaluations(prev_density, model, sigma, x_k, dt, m, false, rng)?;
    let y0 = prev_density.value(x_k);
    let div = model.drift_divergence(x_k);
    let full = values.iter().sum::<f64>() / m as f64;
    let expectations = if cfg.decouple_mc {
        vec![full; m]
    } else {
        let mut acc = 0.0;
        values
            .iter()
            .enumerate()
            .map(|(j, v)| {
                acc += v;
                acc / (j + 1) as f64
            })
            .collect()
    };
    fixed_point_iterate(y0, div * dt, &expectations, divergence_limit(scale, y0, &values))
}

/// Iterates `y ← e_m − c·y` over the supplied expectation sequence.
pub fn fixed_point_iterate(y0: f64, c: f64, expectations: &[f64], limit: f64) -> Result<FixedPoint> {
    let mut iterates = Vec::with_capacity(expectations.len() + 1);
    iterates.push(y0);
    let mut y = y0;
    for (idx, e) in expectations.iter().enumerate() {
        y = e - c * y;
        if !y.is_finite() || (limit > 0.0 && y.abs() > limit) {
            return Err(Error::ContractionFailure {
                iterate: idx + 1,
                value: y.abs(),
            });
        }
        iterates.push(y);
    }
    Ok(FixedPoint { value: y, iterates })
}

/// `Ê[f(X̃)] − Ê[div(X̃) f(X̃)]·dt` over one set of M backward samples.
pub fn predict_value_left_point<M: StateSpaceModel + ?Sized>(
    prev_density: &dyn DensityFn,
    model: &M,
    t_k: f64,
    x_k: &[f64],
    dt: f64,
    cfg: &PredictConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    let sigma = model.diffusion(t_k);
    left_point_with(prev_density, model, &sigma, x_k, dt, cfg, rng)
}

fn left_point_with<M: StateSpaceModel + ?Sized>(
    prev_density: &dyn DensityFn,
    model: &M,
    sigma: &DMatrix<f64>,
    x_k: &[f64],
    dt: f64,
    cfg: &PredictConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    let m = cfg.mc_samples;
    let (values, divs) = backward_evaluations(prev_density, model, sigma, x_k, dt, m, true, rng)?;
    let mean = values.iter().sum::<f64>() / m as f64;
    let weighted = values.iter().zip(&divs).map(|(v, d)| d * v).sum::<f64>() / m as f64;
    Ok(mean - weighted * dt)
}

/// Dispatches on `cfg.variant`.
pub fn predict_value<M: StateSpaceModel + ?Sized>(
    prev_density: &dyn DensityFn,
    model: &M,
    t_k: f64,
    x_k: &[f64],
    dt: f64,
    cfg: &PredictConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    match cfg.variant {
        PredictVariant::RightPointFixedPoint => {
            predict_value_right_point(prev_density, model, t_k, x_k, dt, cfg, rng)
        }
        PredictVariant::LeftPoint => predict_value_left_point(prev_density, model, t_k, x_k, dt, cfg, rng),
    }
}

/// Prediction step for a whole cloud: forward-propagate every particle of
/// `prev` from `t_{k−1}` to `t_k`, then attach its prior density value
/// (clamped at 0). Particles use streams keyed by their ids.
pub fn predict_cloud<M: StateSpaceModel + ?Sized>(
    prev: &ParticleCloud,
    prev_density: &dyn DensityFn,
    model: &M,
    grid: &TimeGrid,
    k: usize,
    cfg: &PredictConfig,
    streams: &Streams,
) -> Result<ParticleCloud> {
    cfg.validate()?;
    if k == 0 || k > grid.steps() {
        return Err(Error::config(format!("prediction step k={k} outside 1..={}", grid.steps())));
    }
    if prev.is_empty() {
        return Err(Error::config("prediction needs at least one particle"));
    }
    let (t_prev, t_now, dt) = (grid.time(k - 1), grid.time(k), grid.dt(k));
    let sigma_prev = model.diffusion(t_prev);
    let sigma_now = model.diffusion(t_now);
    let d = model.dim_state();
    let scale = prev.values.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
    let results: Vec<Result<(Vec<f64>, f64)>> = (0..prev.len())
        .into_par_iter()
        .map(|i| {
            let id = prev.ids[i];
            let mut dw = vec![0.0; model.dim_noise()];
            fill_normal(&mut streams.stream(Purpose::Forward, k as u64, id), dt, &mut dw);
            let mut x = vec![0.0; d];
            shift_into(model, &sigma_prev, prev.location(i), dt, 1.0, &dw, &mut x);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::ModelBlowUp { t: t_now, state: x });
            }
            let mut rng = streams.stream(Purpose::Backward, k as u64, id);
            let value = match cfg.variant {
                PredictVariant::RightPointFixedPoint => {
                    right_point_with(prev_density, model, &sigma_now, &x, dt, scale, cfg, &mut rng)?.value
                }
                PredictVariant::LeftPoint => {
                    left_point_with(prev_density, model, &sigma_now, &x, dt, cfg, &mut rng)?
                }
            };
            Ok((x, value.max(0.0)))
        })
        .collect();
    let predicted = Error::collect_particles(results)?;
    let mut locations = Vec::with_capacity(prev.len() * d);
    let mut values = Vec::with_capacity(prev.len());
    for (x, v) in predicted {
        locations.extend(x);
        values.push(v);
    }
    Ok(ParticleCloud {
        k,
        dim: d,
        locations,
        values,
        ids: prev.ids.clone(),
        stage: Stage::Prior,
    })
}
