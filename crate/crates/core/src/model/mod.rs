//! State-space models `dS = g(S)dt + σ_t dW`, `dO = h(S)dt + r_t dV`.

mod zoo;

pub use zoo::{DoubleWell, LinearGaussian, LinearModel, ModelRegistry, ZOO_NAMES};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fill_normal, Purpose, StreamRng, Streams};

/// A continuous-time state/observation system with additive, time-only noise.
///
/// `diffusion` and `obs_noise` take time but no state: the filter's backward
/// scheme is only valid for state-independent diffusion.
pub trait StateSpaceModel: Send + Sync {
    fn name(&self) -> &str;
    fn dim_state(&self) -> usize;
    fn dim_obs(&self) -> usize;
    /// Number of driving Brownian motions (columns of σ_t).
    fn dim_noise(&self) -> usize {
        self.dim_state()
    }
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// `Σ_j ∂g_j/∂x_j`. Override with the analytic value; the default is a
    /// central finite difference.
    fn drift_divergence(&self, x: &[f64]) -> f64 {
        divergence_fd(self, x)
    }
    /// σ_t, a `dim_state × dim_noise` matrix.
    fn diffusion(&self, t: f64) -> DMatrix<f64>;
    fn obs_map(&self, x: &[f64], out: &mut [f64]);
    /// r_t, a `dim_obs × dim_obs` matrix.
    fn obs_noise(&self, t: f64) -> DMatrix<f64>;
    fn initial_density(&self, x: &[f64]) -> f64;
    fn sample_initial(&self, rng: &mut StreamRng) -> Vec<f64>;
    /// Analytic initial mean and covariance, when known.
    fn initial_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }
    /// `sup_x |Σ_j ∂g_j/∂x_j|` when finite and known.
    fn divergence_bound(&self) -> Option<f64> {
        None
    }
    /// Matrices of the model when it is linear-Gaussian (Kalman oracle).
    fn linear_gaussian(&self) -> Option<LinearGaussian> {
        None
    }
}

/// Central finite-difference divergence, step `1e-5 (1 + |x_j|)`.
pub fn divergence_fd<M: StateSpaceModel + ?Sized>(model: &M, x: &[f64]) -> f64 {
    let d = model.dim_state();
    let mut probe = x.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut div = 0.0;
    for j in 0..d {
        let h = 1e-5 * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        model.drift(&probe, &mut plus);
        probe[j] = x[j] - h;
        model.drift(&probe, &mut minus);
        probe[j] = x[j];
        div += (plus[j] - minus[j]) / (2.0 * h);
    }
    div
}

/// Compares the analytic divergence against central differences on probe
/// points. Returns the worst relative discrepancy.
pub fn check_divergence<M: StateSpaceModel + ?Sized>(model: &M, probes: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in probes {
        let analytic = model.drift_divergence(p);
        let fd = divergence_fd(model, p);
        let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
        if rel > 1e-4 {
            return Err(Error::config(format!(
                "model {:?}: drift_divergence {analytic} disagrees with finite differences {fd} at {p:?}",
                model.name()
            )));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Time knots `t_0 < t_1 < … < t_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > t0) {
            return Err(Error::config("time grid needs K >= 1 and T > t_0"));
        }
        let dt = (horizon - t0) / steps as f64;
        let mut knots: Vec<f64> = (0..=steps).map(|k| t0 + k as f64 * dt).collect();
        knots[steps] = horizon;
        Ok(Self { knots })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::config("time grid needs at least two knots"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("time knots must be finite and strictly increasing"));
        }
        Ok(Self { knots })
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn t0(&self) -> f64 {
        self.knots[0]
    }

    pub fn horizon(&self) -> f64 {
        self.knots[self.steps()]
    }

    pub fn time(&self, k: usize) -> f64 {
        self.knots[k]
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `t_k − t_{k−1}` for `k ≥ 1`.
    pub fn dt(&self, k: usize) -> f64 {
        self.knots[k] - self.knots[k - 1]
    }

    pub fn max_dt(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt >= 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time step must be finite and non-negative, got {dt}")))
    }
}

fn finite_or_blowup(t: f64, x: Vec<f64>) -> Result<Vec<f64>> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::ModelBlowUp { t, state: x })
    }
}

/// `out = x + sign·g(x)·dt + σ·dw`. `sigma` is σ_t evaluated by the caller.
pub(crate) fn shift_into<M: StateSpaceModel + ?Sized>(
    model: &M,
    sigma: &DMatrix<f64>,
    x: &[f64],
    dt: f64,
    sign: f64,
    dw: &[f64],
    out: &mut [f64],
) {
    model.drift(x, out);
    for (j, o) in out.iter_mut().enumerate() {
        let mut noise = 0.0;
        for (c, w) in dw.iter().enumerate() {
            noise += sigma[(j, c)] * w;
        }
        *o = x[j] + sign * *o * dt + noise;
    }
}

/// One Euler–Maruyama step `x + g(x)·dt + σ_t·dW`.
///
/// With σ independent of the state this is also the Milstein step.
pub fn euler_step<M: StateSpaceModel + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let sigma = model.diffusion(t);
    let mut out = vec![0.0; model.dim_state()];
    shift_into(model, &sigma, x, dt, 1.0, dw, &mut out);
    finite_or_blowup(t + dt, out)
}

/// Backward sample `x_k − g(x_k)·dt + σ_{t_k}·dW`.
pub fn backward_sample<M: StateSpaceModel + ?Sized>(
    model: &M,
    t_k: f64,
    x_k: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let sigma = model.diffusion(t_k);
    let mut out = vec![0.0; model.dim_state()];
    shift_into(model, &sigma, x_k, dt, -1.0, dw, &mut out);
    finite_or_blowup(t_k - dt, out)
}

/// Quadrature for `∫ h(S_t) dt` over one observation interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsQuadrature {
    /// `h(S_{t_{k−1}})·Δt`
    Left,
    /// `h(S_{t_k})·Δt`, consistent with the update step's likelihood.
    #[default]
    Right,
}

/// A simulated truth path and its observation path on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

/// Simulates `S` by Euler–Maruyama from a draw of `p_0` and integrates the
/// observation SDE with `O_{t_0} = 0`.
pub fn simulate_truth<M: StateSpaceModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    streams: &Streams,
    quadrature: ObsQuadrature,
) -> Result<Trajectory> {
    let s0 = model.sample_initial(&mut streams.stream(Purpose::Truth, 0, 0));
    simulate_truth_from(model, grid, &s0, streams, quadrature)
}

pub fn simulate_truth_from<M: StateSpaceModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    initial_state: &[f64],
    streams: &Streams,
    quadrature: ObsQuadrature,
) -> Result<Trajectory> {
    let (dx, dy, dw) = (model.dim_state(), model.dim_obs(), model.dim_noise());
    let mut states = Vec::with_capacity(grid.steps() + 1);
    let mut observations = Vec::with_capacity(grid.steps() + 1);
    states.push(initial_state.to_vec());
    observations.push(vec![0.0; dy]);
    let mut h = vec![0.0; dy];
    let mut noise = vec![0.0; dw];
    let mut obs_noise = vec![0.0; dy];
    for k in 1..=grid.steps() {
        let (t_prev, t_now, dt) = (grid.time(k - 1), grid.time(k), grid.dt(k));
        fill_normal(&mut streams.stream(Purpose::Truth, k as u64, 0), dt, &mut noise);
        let next = euler_step(model, t_prev, &states[k - 1], dt, &noise)?;
        debug_assert_eq!(next.len(), dx);
        match quadrature {
            ObsQuadrature::Right => model.obs_map(&next, &mut h),
            ObsQuadrature::Left => model.obs_map(&states[k - 1], &mut h),
        }
        fill_normal(
            &mut streams.stream(Purpose::Observation, k as u64, 0),
            dt,
            &mut obs_noise,
        );
        let r = model.obs_noise(t_now);
        let prev = &observations[k - 1];
        let obs: Vec<f64> = (0..dy)
            .map(|j| {
                let mut v = prev[j] + h[j] * dt;
                for (c, n) in obs_noise.iter().enumerate() {
                    v += r[(j, c)] * n;
                }
                v
            })
            .collect();
        states.push(next);
        observations.push(finite_or_blowup(t_now, obs)?);
    }
    Ok(Trajectory {
        times: grid.knots().to_vec(),
        states,
        observations,
    })
}
