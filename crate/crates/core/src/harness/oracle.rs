//! Deterministic quadrature references for one-dimensional models.

use crate::bayes::Likelihood;
use crate::error::{Error, Result};
use crate::gaussian::normal_pdf;
use crate::kde::DensityFn;
use crate::model::{StateSpaceModel, TimeGrid};

/// Grid points used by every dense-grid oracle.
pub const GRID_POINTS: usize = 4096;

/// Composite trapezoid rule on `n` equally spaced points of `[a, b]`.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / (n - 1) as f64;
    let inner: f64 = (1..n - 1).map(|i| f(a + h * i as f64)).sum();
    h * (inner + 0.5 * (f(a) + f(b)))
}

fn require_1d<M: StateSpaceModel + ?Sized>(model: &M) -> Result<()> {
    if model.dim_state() != 1 || model.dim_noise() != 1 {
        return Err(Error::config(format!(
            "quadrature oracle is only available for scalar models, {:?} has d_x = {}",
            model.name(),
            model.dim_state()
        )));
    }
    Ok(())
}

/// Large-M limit of the left-point predictor,
/// `E[(1 − div g(X) dt) f(X)]` with `X = x − g(x) dt + σ_{t_k} √dt Z`.
pub fn left_point_limit<M: StateSpaceModel + ?Sized>(
    model: &M,
    prev_density: &dyn DensityFn,
    t_k: f64,
    x: f64,
    dt: f64,
) -> Result<f64> {
    require_1d(model)?;
    let mut g = [0.0];
    model.drift(&[x], &mut g);
    let mean = x - g[0] * dt;
    let sd = model.diffusion(t_k)[(0, 0)].abs() * dt.sqrt();
    if sd == 0.0 {
        return Ok((1.0 - model.drift_divergence(&[mean]) * dt) * prev_density.value(&[mean]));
    }
    let integrand = |z: f64| {
        let xb = mean + sd * z;
        (1.0 - model.drift_divergence(&[xb]) * dt) * prev_density.value(&[xb]) * normal_pdf(z, 0.0, 1.0)
    };
    Ok(trapezoid(integrand, -8.0, 8.0, GRID_POINTS + 1))
}

/// `∫ p(O_k | s) p(s) ds` over `[lo, hi]`.
pub fn denominator_quadrature<M: StateSpaceModel + ?Sized>(
    lik: &Likelihood<'_, M>,
    prior: &dyn DensityFn,
    lo: f64,
    hi: f64,
) -> f64 {
    trapezoid(|s| lik.density(&[s]) * prior.value(&[s]), lo, hi, GRID_POINTS + 1)
}

/// Dense-grid Fokker–Planck/Bayes reference filter for scalar models: the
/// Euler transition density integrated by the trapezoid rule, then multiplied
/// by the likelihood and renormalized.
#[derive(Clone, Debug)]
pub struct GridFilter {
    pub nodes: Vec<f64>,
    pub density: Vec<f64>,
    h: f64,
}

impl GridFilter {
    pub fn new<M: StateSpaceModel + ?Sized>(model: &M, lo: f64, hi: f64) -> Result<Self> {
        require_1d(model)?;
        if !(hi > lo) {
            return Err(Error::config("grid oracle needs lo < hi"));
        }
        let h = (hi - lo) / (GRID_POINTS - 1) as f64;
        let nodes: Vec<f64> = (0..GRID_POINTS).map(|i| lo + h * i as f64).collect();
        let density = nodes.iter().map(|x| model.initial_density(&[*x])).collect();
        let mut out = Self { nodes, density, h };
        out.normalize();
        Ok(out)
    }

    fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.nodes.len();
        (0..n).map(move |i| if i == 0 || i + 1 == n { 0.5 * self.h } else { self.h })
    }

    fn normalize(&mut self) {
        let mass: f64 = self.density.iter().zip(self.weights()).map(|(p, w)| p * w).sum();
        if mass > 0.0 {
            self.density.iter_mut().for_each(|p| *p /= mass);
        }
    }

    /// Advances from `t_{k−1}` to `t_k` and conditions on the observations.
    pub fn step<M: StateSpaceModel + ?Sized>(
        &mut self,
        model: &M,
        grid: &TimeGrid,
        k: usize,
        obs_prev: &[f64],
        obs_now: &[f64],
    ) -> Result<()> {
        let (t_prev, dt) = (grid.time(k - 1), grid.dt(k));
        let var = model.diffusion(t_prev)[(0, 0)].powi(2) * dt;
        if !(var > 0.0) {
            return Err(Error::config("grid oracle needs positive diffusion"));
        }
        let shifted: Vec<f64> = self
            .nodes
            .iter()
            .map(|y| {
                let mut g = [0.0];
                model.drift(&[*y], &mut g);
                y + g[0] * dt
            })
            .collect();
        let weighted: Vec<f64> = self.density.iter().zip(self.weights()).map(|(p, w)| p * w).collect();
        let prior: Vec<f64> = self
            .nodes
            .iter()
            .map(|x| shifted.iter().zip(&weighted).map(|(m, pw)| pw * normal_pdf(*x, *m, var)).sum())
            .collect();
        let lik = Likelihood::new(model, grid.time(k), dt, obs_prev, obs_now)?;
        self.density = prior.iter().zip(&self.nodes).map(|(p, x)| p * lik.density(&[*x])).collect();
        self.normalize();
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.nodes.iter().zip(&self.density).zip(self.weights()).map(|((x, p), w)| x * p * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.nodes
            .iter()
            .zip(&self.density)
            .zip(self.weights())
            .map(|((x, p), w)| (x - m).powi(2) * p * w)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::kalman::kalman_filter;
    use crate::gaussian::Gaussian;
    use crate::model::{LinearModel, ModelRegistry};
    use approx::assert_relative_eq;

    #[test]
    fn trapezoid_integrates_gaussian() {
        assert_relative_eq!(trapezoid(|x| normal_pdf(x, 0.0, 1.0), -10.0, 10.0, 2001), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn left_point_limit_matches_ou_closed_form() {
        let (theta, sigma, dt, mu, s2) = (1.0, 1.0, 0.1, 0.3, 0.5);
        let model = LinearModel::scalar("ou", -theta, sigma, 1.0, 1.0, Gaussian::isotropic(&[mu], s2).unwrap());
        let prev = |x: &[f64]| normal_pdf(x[0], mu, s2);
        for x in [-1.0, 0.0, 0.5, 2.0] {
            let quad = left_point_limit(&model, &prev, 0.1, x, dt).unwrap();
            let exact = (1.0 + theta * dt) * normal_pdf(x * (1.0 + theta * dt), mu, s2 + sigma * sigma * dt);
            assert_relative_eq!(quad, exact, max_relative = 1e-10);
        }
    }

    #[test]
    fn denominator_matches_gaussian_marginal() {
        let reg = ModelRegistry::default();
        let model = reg.get("linear1d").unwrap();
        let (dt, o) = (0.1, 0.07);
        let lik = Likelihood::new(model.as_ref(), dt, dt, &[0.0], &[o]).unwrap();
        let prior = |x: &[f64]| normal_pdf(x[0], 1.0, 0.25);
        let quad = denominator_quadrature(&lik, &prior, 1.0 - 4.0, 1.0 + 4.0);
        // O ~ N(h μ dt, h² s² dt² + r² dt)
        let exact = normal_pdf(o, 1.0 * dt, 0.25 * dt * dt + 0.09 * dt);
        assert_relative_eq!(quad, exact, max_relative = 1e-10);
    }

    #[test]
    fn grid_filter_tracks_kalman() {
        let reg = ModelRegistry::default();
        let model = reg.get("linear1d").unwrap();
        let grid = TimeGrid::uniform(0.0, 0.5, 5).unwrap();
        let obs: Vec<Vec<f64>> = (0..=5).map(|k| vec![0.05 * k as f64]).collect();
        let mut gf = GridFilter::new(model.as_ref(), -3.0, 5.0).unwrap();
        let kf = kalman_filter(&model.linear_gaussian().unwrap(), &grid, &obs).unwrap();
        for k in 1..=5 {
            gf.step(model.as_ref(), &grid, k, &obs[k - 1], &obs[k]).unwrap();
            assert_relative_eq!(gf.mean(), kf[k].0[0], max_relative = 1e-6);
            assert_relative_eq!(gf.variance(), kf[k].1[(0, 0)], max_relative = 1e-5);
        }
    }

    #[test]
    fn rejects_multivariate_models() {
        let reg = ModelRegistry::default();
        let model = reg.get("linear2d").unwrap();
        assert!(GridFilter::new(model.as_ref(), -1.0, 1.0).is_err());
    }
}
