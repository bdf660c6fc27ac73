//! Exact filter for the Euler-discretized linear-Gaussian model
//! `x_k = (I + A dt) x_{k−1} + w`, `w ~ N(0, σσᵀ dt)`, observing the increment
//! `O_k − O_{k−1} = H dt x_k + v`, `v ~ N(0, r rᵀ dt)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LinearGaussian, TimeGrid};

pub type Moments = (DVector<f64>, DMatrix<f64>);

pub fn kalman_predict(mean: &DVector<f64>, cov: &DMatrix<f64>, f: &DMatrix<f64>, q: &DMatrix<f64>) -> Moments {
    (f * mean, f * cov * f.transpose() + q)
}

/// Conditions `N(mean, cov)` on `z = H x + v`, `v ~ N(0, R)`.
pub fn kalman_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<Moments> {
    let s = h * cov * h.transpose() + r;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let gain = chol.solve(&(h * cov)).transpose();
    let innovation = z - h * mean;
    let mean = mean + &gain * innovation;
    // Joseph form keeps the covariance symmetric positive semi-definite.
    let i_kh = DMatrix::identity(cov.nrows(), cov.ncols()) - &gain * h;
    let cov = &i_kh * cov * i_kh.transpose() + &gain * r * gain.transpose();
    Ok((mean, (&cov + cov.transpose()) * 0.5))
}

/// Posterior moments for k = 0..=K given `O_{t_0}, …, O_{t_K}`.
pub fn kalman_filter(spec: &LinearGaussian, grid: &TimeGrid, observations: &[Vec<f64>]) -> Result<Vec<Moments>> {
    if observations.len() != grid.steps() + 1 {
        return Err(Error::config("Kalman filter needs one observation per grid knot"));
    }
    let d = spec.drift.nrows();
    let mut out = Vec::with_capacity(grid.steps() + 1);
    out.push((spec.initial.mean().clone(), spec.initial.cov().clone()));
    for k in 1..=grid.steps() {
        let dt = grid.dt(k);
        let f = DMatrix::identity(d, d) + &spec.drift * dt;
        let q = &spec.diffusion * spec.diffusion.transpose() * dt;
        let h = &spec.obs * dt;
        let r = &spec.obs_noise * spec.obs_noise.transpose() * dt;
        let z = DVector::from_iterator(
            h.nrows(),
            observations[k].iter().zip(&observations[k - 1]).map(|(a, b)| a - b),
        );
        let (m, c) = &out[k - 1];
        let (pm, pc) = kalman_predict(m, c, &f, &q);
        out.push(kalman_update(&pm, &pc, &h, &r, &z)?);
    }
    Ok(out)
}
