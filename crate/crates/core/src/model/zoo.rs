use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::StateSpaceModel;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::rng::StreamRng;

pub const ZOO_NAMES: [&str; 4] = ["linear1d", "ou1d", "doublewell1d", "linear2d"];

/// Matrices of a linear-Gaussian model: `g(x) = A x`, constant σ, `h(x) = H x`,
/// constant r, Gaussian `p_0`.
#[derive(Clone, Debug)]
pub struct LinearGaussian {
    pub drift: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
    pub obs: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
    pub initial: Gaussian,
}

/// Linear drift and observation map with constant noise matrices.
#[derive(Clone, Debug)]
pub struct LinearModel {
    name: String,
    spec: LinearGaussian,
}

impl LinearModel {
    pub fn new(name: impl Into<String>, spec: LinearGaussian) -> Result<Self> {
        let d = spec.initial.dim();
        let dy = spec.obs.nrows();
        let ok = spec.drift.shape() == (d, d)
            && spec.diffusion.nrows() == d
            && spec.obs.ncols() == d
            && spec.obs_noise.shape() == (dy, dy);
        if !ok {
            return Err(Error::config("linear model matrices have inconsistent shapes"));
        }
        Ok(Self {
            name: name.into(),
            spec,
        })
    }

    /// One-dimensional `dS = a S dt + σ dW`, `dO = h S dt + r dV`.
    pub fn scalar(name: &str, a: f64, sigma: f64, h: f64, r: f64, initial: Gaussian) -> Self {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(
            name,
            LinearGaussian {
                drift: m(a),
                diffusion: m(sigma),
                obs: m(h),
                obs_noise: m(r),
                initial,
            },
        )
        .expect("scalar shapes are consistent")
    }

    pub fn spec(&self) -> &LinearGaussian {
        &self.spec
    }
}

impl StateSpaceModel for LinearModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim_state(&self) -> usize {
        self.spec.drift.nrows()
    }

    fn dim_obs(&self) -> usize {
        self.spec.obs.nrows()
    }

    fn dim_noise(&self) -> usize {
        self.spec.diffusion.ncols()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let a = &self.spec.drift;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| a[(i, j)] * x[j]).sum();
        }
    }

    fn drift_divergence(&self, _x: &[f64]) -> f64 {
        self.spec.drift.trace()
    }

    fn diffusion(&self, _t: f64) -> DMatrix<f64> {
        self.spec.diffusion.clone()
    }

    fn obs_map(&self, x: &[f64], out: &mut [f64]) {
        let h = &self.spec.obs;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| h[(i, j)] * x[j]).sum();
        }
    }

    fn obs_noise(&self, _t: f64) -> DMatrix<f64> {
        self.spec.obs_noise.clone()
    }

    fn initial_density(&self, x: &[f64]) -> f64 {
        self.spec.initial.density(x)
    }

    fn sample_initial(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.spec.initial.sample(rng)
    }

    fn initial_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        Some((self.spec.initial.mean().clone(), self.spec.initial.cov().clone()))
    }

    fn divergence_bound(&self) -> Option<f64> {
        Some(self.spec.drift.trace().abs())
    }

    fn linear_gaussian(&self) -> Option<LinearGaussian> {
        Some(self.spec.clone())
    }
}

/// `g(x) = x − x³` with constant noise and `h(x) = x`.
#[derive(Clone, Debug)]
pub struct DoubleWell {
    pub sigma: f64,
    pub r: f64,
    pub initial: Gaussian,
}

impl StateSpaceModel for DoubleWell {
    fn name(&self) -> &str {
        "doublewell1d"
    }

    fn dim_state(&self) -> usize {
        1
    }

    fn dim_obs(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] - x[0] * x[0] * x[0];
    }

    fn drift_divergence(&self, x: &[f64]) -> f64 {
        1.0 - 3.0 * x[0] * x[0]
    }

    fn diffusion(&self, _t: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.sigma)
    }

    fn obs_map(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }

    fn obs_noise(&self, _t: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }

    fn initial_density(&self, x: &[f64]) -> f64 {
        self.initial.density(x)
    }

    fn sample_initial(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.initial.sample(rng)
    }

    fn initial_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        Some((self.initial.mean().clone(), self.initial.cov().clone()))
    }
}

fn zoo_model(name: &str) -> Option<Arc<dyn StateSpaceModel>> {
    let g = |mean: &[f64], var: f64| Gaussian::isotropic(mean, var).expect("positive variance");
    let model: Arc<dyn StateSpaceModel> = match name {
        "linear1d" => Arc::new(LinearModel::scalar("linear1d", -0.5, 0.5, 1.0, 0.3, g(&[1.0], 0.25))),
        "ou1d" => Arc::new(LinearModel::scalar("ou1d", -1.0, 1.0, 1.0, 0.5, g(&[0.0], 1.0))),
        "doublewell1d" => Arc::new(DoubleWell {
            sigma: 0.5,
            r: 0.3,
            initial: g(&[1.0], 0.09),
        }),
        "linear2d" => Arc::new(
            LinearModel::new(
                "linear2d",
                LinearGaussian {
                    drift: DMatrix::from_row_slice(2, 2, &[-0.5, -1.0, 1.0, -0.5]),
                    diffusion: DMatrix::identity(2, 2) * 0.5,
                    obs: DMatrix::identity(2, 2),
                    obs_noise: DMatrix::identity(2, 2) * 0.3,
                    initial: g(&[1.0, 0.0], 0.25),
                },
            )
            .expect("zoo shapes are consistent"),
        ),
        _ => return None,
    };
    Some(model)
}

/// Name → model lookup, pre-populated with the built-in zoo.
#[derive(Clone)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<dyn StateSpaceModel>>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let models = ZOO_NAMES
            .iter()
            .map(|n| (n.to_string(), zoo_model(n).expect("zoo name")))
            .collect();
        Self { models }
    }
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, model: Arc<dyn StateSpaceModel>) {
        self.models.insert(name.into(), model);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn StateSpaceModel>> {
        self.models
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }
}
