//! Observation likelihood and the self-normalized Bayesian update of particle
//! density values.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::StateSpaceModel;
use crate::predict::{ParticleCloud, Stage};

/// Log-likelihoods below this are treated as underflow.
pub const LOG_UNDERFLOW: f64 = -700.0;

/// `p(O_{t_k} | S_k = x)`: Gaussian with mean `O_{t_{k−1}} + h(x)·dt` and
/// covariance `r rᵀ·dt`.
pub struct Likelihood<'a, M: StateSpaceModel + ?Sized> {
    model: &'a M,
    obs_prev: Vec<f64>,
    obs_now: Vec<f64>,
    dt: f64,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl<'a, M: StateSpaceModel + ?Sized> Likelihood<'a, M> {
    /// Uses the model's observation noise at `t_k`.
    pub fn new(model: &'a M, t_k: f64, dt: f64, obs_prev: &[f64], obs_now: &[f64]) -> Result<Self> {
        Self::with_noise(model, model.obs_noise(t_k), dt, obs_prev, obs_now)
    }

    pub fn with_noise(
        model: &'a M,
        r: DMatrix<f64>,
        dt: f64,
        obs_prev: &[f64],
        obs_now: &[f64],
    ) -> Result<Self> {
        let dy = model.dim_obs();
        if obs_prev.len() != dy || obs_now.len() != dy || r.nrows() != dy {
            return Err(Error::config(format!("observation dimension mismatch (d_y = {dy})")));
        }
        let cov = &r * r.transpose() * dt;
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(cov).ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let log_norm = -0.5 * (dy as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            model,
            obs_prev: obs_prev.to_vec(),
            obs_now: obs_now.to_vec(),
            dt,
            chol,
            log_norm,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let dy = self.obs_now.len();
        let mut h = vec![0.0; dy];
        self.model.obs_map(x, &mut h);
        let resid = DVector::from_fn(dy, |j, _| self.obs_now[j] - self.obs_prev[j] - h[j] * self.dt);
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&resid)
            .expect("positive definite factor");
        self.log_norm - 0.5 * z.norm_squared()
    }

    /// Density value, floored at `exp(LOG_UNDERFLOW)`.
    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).max(LOG_UNDERFLOW).exp()
    }
}

/// Free-function form of [`Likelihood::density`].
pub fn likelihood_density<M: StateSpaceModel + ?Sized>(lik: &Likelihood<'_, M>, x: &[f64]) -> f64 {
    lik.density(x)
}

fn check_prior(prior: &ParticleCloud) -> Result<()> {
    if prior.is_empty() {
        return Err(Error::config("Bayesian update needs at least one particle"));
    }
    Ok(())
}

/// `Ỹ_i = p(O|X̃_i) Ỹ^O_i / ((1/N) Σ_j p(O|X̃_j))`.
///
/// Computed from log-likelihoods shifted by their maximum, so the common
/// scale cancels before exponentiation.
pub fn bayes_update<M: StateSpaceModel + ?Sized>(
    prior: &ParticleCloud,
    lik: &Likelihood<'_, M>,
) -> Result<ParticleCloud> {
    check_prior(prior)?;
    let logs: Vec<f64> = (0..prior.len()).map(|i| lik.log_density(prior.location(i))).collect();
    bayes_update_log(prior, &logs)
}

pub fn bayes_update_log(prior: &ParticleCloud, log_likelihoods: &[f64]) -> Result<ParticleCloud> {
    check_prior(prior)?;
    if log_likelihoods.len() != prior.len() {
        return Err(Error::config("one likelihood per particle required"));
    }
    let top = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top >= LOG_UNDERFLOW) {
        return Err(Error::DegenerateObservation);
    }
    let scaled: Vec<f64> = log_likelihoods.iter().map(|l| (l - top).exp()).collect();
    apply_weights(prior, &scaled)
}

/// Update with likelihood values supplied directly.
pub fn bayes_update_with_likelihoods(prior: &ParticleCloud, likelihoods: &[f64]) -> Result<ParticleCloud> {
    check_prior(prior)?;
    if likelihoods.len() != prior.len() {
        return Err(Error::config("one likelihood per particle required"));
    }
    if likelihoods.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::Domain("likelihoods must be finite and non-negative".into()));
    }
    if likelihoods.iter().all(|l| *l < LOG_UNDERFLOW.exp()) {
        return Err(Error::DegenerateObservation);
    }
    apply_weights(prior, likelihoods)
}

fn apply_weights(prior: &ParticleCloud, likelihoods: &[f64]) -> Result<ParticleCloud> {
    let denom = likelihoods.iter().sum::<f64>() / likelihoods.len() as f64;
    let mut post = prior.clone();
    post.values = prior
        .values
        .iter()
        .zip(likelihoods)
        .map(|(y, l)| l * y / denom)
        .collect();
    post.stage = Stage::Posterior;
    Ok(post)
}

/// `(1/N) Σ_j p(O | X̃_j)`, the Monte-Carlo evidence estimate.
pub fn denominator_mc<M: StateSpaceModel + ?Sized>(cloud: &ParticleCloud, lik: &Likelihood<'_, M>) -> Result<f64> {
    check_prior(cloud)?;
    let mut logs = Vec::with_capacity(cloud.len());
    let mut sum = 0.0;
    for i in 0..cloud.len() {
        let l = lik.log_density(cloud.location(i));
        logs.push(l);
        sum += l.max(LOG_UNDERFLOW).exp();
    }
    if logs.iter().all(|l| *l < LOG_UNDERFLOW) {
        return Err(Error::DegenerateObservation);
    }
    Ok(sum / cloud.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::model::LinearModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(h: f64) -> LinearModel {
        LinearModel::scalar("m", -1.0, 1.0, h, 1.0, Gaussian::isotropic(&[0.0], 1.0).unwrap())
    }

    fn cloud(locs: &[f64], vals: &[f64]) -> ParticleCloud {
        ParticleCloud::new(1, 1, locs.to_vec(), vals.to_vec(), Stage::Prior).unwrap()
    }

    #[test]
    fn likelihood_hand_value() {
        let m = model(1.0);
        let lik = Likelihood::new(&m, 0.1, 0.1, &[0.0], &[0.1]).unwrap();
        let v = likelihood_density(&lik, &[1.0]);
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI * 0.1).powf(-0.5), max_relative = 1e-14);
        assert_relative_eq!(v, 1.26157, max_relative = 1e-5);
    }

    #[test]
    fn likelihood_mode_value_2d() {
        let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let m = LinearModel::new(
            "zero-h",
            crate::model::LinearGaussian {
                drift: DMatrix::zeros(2, 2),
                diffusion: DMatrix::identity(2, 2),
                obs: DMatrix::zeros(2, 2),
                obs_noise: r.clone(),
                initial: Gaussian::isotropic(&[0.0, 0.0], 1.0).unwrap(),
            },
        )
        .unwrap();
        let dt = 0.05;
        let lik = Likelihood::new(&m, 0.0, dt, &[0.3, -0.2], &[0.3, -0.2]).unwrap();
        let det = (&r * r.transpose()).determinant();
        let expect = (2.0 * std::f64::consts::PI * dt).powi(-1) * det.powf(-0.5);
        assert_relative_eq!(lik.density(&[4.0, 1.0]), expect, max_relative = 1e-12);
    }

    #[test]
    fn likelihood_integrates_to_one_over_observation() {
        let m = model(2.0);
        let (dt, prev, x) = (0.05, 0.3, [0.8]);
        let f = |o: f64| Likelihood::new(&m, 0.0, dt, &[prev], &[o]).unwrap().density(&x);
        let mean = prev + 2.0 * 0.8 * dt;
        let sd = dt.sqrt();
        let (a, b, n) = (mean - 20.0 * sd, mean + 20.0 * sd, 20_000);
        let h = (b - a) / n as f64;
        let total: f64 = h * (0.5 * (f(a) + f(b)) + (1..n).map(|i| f(a + i as f64 * h)).sum::<f64>());
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn singular_noise_is_rejected() {
        let m = model(1.0);
        assert!(matches!(
            Likelihood::with_noise(&m, DMatrix::zeros(1, 1), 0.1, &[0.0], &[0.0]),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(Likelihood::new(&m, 0.0, 0.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn hand_evaluated_update() {
        let prior = cloud(&[0.0, 1.0], &[2.0, 1.0]);
        let post = bayes_update_with_likelihoods(&prior, &[1.0, 3.0]).unwrap();
        assert_eq!(post.values, vec![1.0, 1.5]);
        assert_eq!(post.stage, Stage::Posterior);
        assert_eq!(post.locations, prior.locations);
    }

    #[test]
    fn uniform_likelihood_cancels() {
        let m = model(0.0);
        let lik = Likelihood::new(&m, 0.0, 0.1, &[0.0], &[0.2]).unwrap();
        let prior = cloud(&[-1.0, 0.0, 2.0], &[0.1, 0.5, 0.25]);
        let post = bayes_update(&prior, &lik).unwrap();
        for (a, b) in post.values.iter().zip(&prior.values) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn denominator_values() {
        let m = model(0.0);
        let lik = Likelihood::new(&m, 0.0, 0.1, &[0.0], &[0.0]).unwrap();
        let c = lik.density(&[0.0]);
        assert_relative_eq!(denominator_mc(&cloud(&[1.0, 5.0], &[1.0, 1.0]), &lik).unwrap(), c, max_relative = 1e-15);
    }

    #[test]
    fn degenerate_observation() {
        let m = model(1.0);
        let lik = Likelihood::new(&m, 0.0, 1e-4, &[0.0], &[10.0]).unwrap();
        let prior = cloud(&[0.0, 0.1], &[1.0, 1.0]);
        assert!(matches!(bayes_update(&prior, &lik), Err(Error::DegenerateObservation)));
        assert!(matches!(denominator_mc(&prior, &lik), Err(Error::DegenerateObservation)));
        assert!(matches!(
            bayes_update_with_likelihoods(&prior, &[0.0, 0.0]),
            Err(Error::DegenerateObservation)
        ));
    }

    #[test]
    fn far_tail_update_does_not_underflow() {
        // Raw likelihoods ≈ e^{-800} and e^{-801}: the shifted ratio survives.
        let prior = cloud(&[0.0, 1.0], &[1.0, 1.0]);
        let post = bayes_update_log(&prior, &[-650.0, -651.0]).unwrap();
        let e = (-1.0f64).exp();
        assert_relative_eq!(post.values[0], 2.0 / (1.0 + e), max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn likelihood_scaling_cancels(
            liks in proptest::collection::vec(0.01f64..10.0, 1..20),
            scale in 1e-3f64..1e3,
        ) {
            let n = liks.len();
            let vals: Vec<f64> = (0..n).map(|i| 0.1 + i as f64 * 0.05).collect();
            let prior = cloud(&vec![0.0; n], &vals);
            let a = bayes_update_with_likelihoods(&prior, &liks).unwrap();
            let scaled: Vec<f64> = liks.iter().map(|l| l * scale).collect();
            let b = bayes_update_with_likelihoods(&prior, &scaled).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }

        #[test]
        fn unit_prior_posterior_mean_is_one(liks in proptest::collection::vec(0.0f64..10.0, 1..50)) {
            prop_assume!(liks.iter().any(|l| *l > 1e-3));
            let prior = cloud(&vec![0.0; liks.len()], &vec![1.0; liks.len()]);
            let post = bayes_update_with_likelihoods(&prior, &liks).unwrap();
            let mean = post.values.iter().sum::<f64>() / liks.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-13);
        }

        #[test]
        fn update_is_permutation_equivariant(
            liks in proptest::collection::vec(0.01f64..5.0, 2..12),
            seed in 0u64..1000,
        ) {
            let n = liks.len();
            let vals: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + seed) % 11) as f64 * 0.1 + 0.05).collect();
            let prior = cloud(&(0..n).map(|i| i as f64).collect::<Vec<_>>(), &vals);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left((seed as usize) % n);
            let post = bayes_update_with_likelihoods(&prior, &liks).unwrap();
            let liks_p: Vec<f64> = perm.iter().map(|&i| liks[i]).collect();
            let post_p = bayes_update_with_likelihoods(&prior.permuted(&perm), &liks_p).unwrap();
            let expect = post.permuted(&perm);
            for (x, y) in expect.values.iter().zip(&post_p.values) {
                prop_assert!((x - y).abs() <= 1e-13 * x.abs().max(1.0));
            }
        }
    }
}
