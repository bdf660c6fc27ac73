//! Multivariate normal helper used by the model zoo, baselines and oracles.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::config(format!(
                "covariance is {}x{}, mean has length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            mean,
            cov: sym,
            chol,
            log_norm,
        })
    }

    pub fn isotropic(mean: &[f64], var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::identity(d, d) * var,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(
            self.dim(),
            x.iter().zip(self.mean.iter()).map(|(a, b)| a - b),
        );
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.mean + self.chol.l_dirty().lower_triangle() * z;
        x.as_slice().to_vec()
    }
}

/// Univariate normal density.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}
