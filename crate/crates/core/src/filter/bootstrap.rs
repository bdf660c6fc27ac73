//! Bootstrap particle filter: propagate by Euler–Maruyama, weight by the
//! observation likelihood, resample multinomially.

use rand::Rng;
use rayon::prelude::*;

use crate::bayes::Likelihood;
use crate::error::{Error, Result};
use crate::model::{euler_step, StateSpaceModel, TimeGrid};
use crate::rng::{normal_vec, Purpose, Streams};

/// Weighted particles before resampling at one time step.
#[derive(Clone, Debug)]
pub struct PfStep {
    pub k: usize,
    /// Row-major `N × d`.
    pub particles: Vec<f64>,
    /// Normalized weights.
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl PfStep {
    pub fn dim(&self) -> usize {
        self.particles.len() / self.weights.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (x, w) in self.particles.chunks_exact(d).zip(&self.weights) {
            m.iter_mut().zip(x).for_each(|(a, b)| *a += w * b);
        }
        m
    }

    pub fn variance(&self) -> Vec<f64> {
        let d = self.dim();
        let mean = self.mean();
        let mut v = vec![0.0; d];
        for (x, w) in self.particles.chunks_exact(d).zip(&self.weights) {
            for j in 0..d {
                v[j] += w * (x[j] - mean[j]).powi(2);
            }
        }
        v
    }
}

/// Runs the filter over `O_{t_0}, …, O_{t_K}`. Entry 0 holds the equally
/// weighted initial draws. Weight collapse (ESS < 5% of N) is logged.
pub fn bootstrap_pf<M: StateSpaceModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    observations: &[Vec<f64>],
    n: usize,
    streams: &Streams,
) -> Result<Vec<PfStep>> {
    if n == 0 {
        return Err(Error::config("bootstrap filter needs N >= 1"));
    }
    if observations.len() != grid.steps() + 1 {
        return Err(Error::config("bootstrap filter needs one observation per grid knot"));
    }
    let d = model.dim_state();
    let mut particles: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| model.sample_initial(&mut streams.stream(Purpose::Bootstrap, 0, i as u64)))
        .collect();
    let mut out = vec![PfStep {
        k: 0,
        particles: particles.clone(),
        weights: vec![1.0 / n as f64; n],
        ess: n as f64,
    }];
    for k in 1..=grid.steps() {
        let (t_prev, dt) = (grid.time(k - 1), grid.dt(k));
        let moved: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let dw = normal_vec(&mut streams.stream(Purpose::Bootstrap, k as u64, i as u64), dt, model.dim_noise());
                euler_step(model, t_prev, &particles[i * d..(i + 1) * d], dt, &dw)
            })
            .collect();
        let moved: Vec<f64> = Error::collect_particles(moved)?.concat();
        let lik = Likelihood::new(model, grid.time(k), dt, &observations[k - 1], &observations[k])?;
        let logw: Vec<f64> = moved.chunks_exact(d).map(|x| lik.log_density(x)).collect();
        let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::DegenerateObservation.at_step(k));
        }
        let mut weights: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        if ess < 0.05 * n as f64 {
            log::warn!("bootstrap filter k={k}: weight collapse, ESS = {ess:.1} of {n}");
        }
        particles = multinomial(&moved, &weights, d, &mut streams.stream(Purpose::Bootstrap, k as u64, u64::MAX));
        out.push(PfStep {
            k,
            particles: moved,
            weights,
            ess,
        });
    }
    Ok(out)
}

/// Multinomial resampling by inverse CDF on sorted uniforms.
fn multinomial<R: Rng>(particles: &[f64], weights: &[f64], d: usize, rng: &mut R) -> Vec<f64> {
    let n = weights.len();
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    u.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(particles.len());
    let (mut acc, mut j) = (weights[0], 0);
    for ui in u {
        while ui >= acc && j + 1 < n {
            j += 1;
            acc += weights[j];
        }
        out.extend_from_slice(&particles[j * d..(j + 1) * d]);
    }
    out
}
