//! Fitting a [`KernelDensity`] to particle density values by single-sample
//! stochastic gradient descent on the squared residual, plus the loss Hessian.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{phi, sq_dist, KernelDensity};
use crate::predict::ParticleCloud;
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterRule {
    #[default]
    UniformSubsample,
    /// Without-replacement draw with probability ∝ density value.
    WeightedSubsample,
}

/// `ρ(s) = ρ₀ / (1 + s/S₀)`; constant when `decay_steps` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRate {
    pub initial: f64,
    #[serde(default)]
    pub decay_steps: Option<f64>,
}

impl LearningRate {
    pub fn constant(rate: f64) -> Self {
        Self {
            initial: rate,
            decay_steps: None,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        match self.decay_steps {
            Some(s0) => self.initial / (1.0 + step as f64 / s0),
            None => self.initial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sgd_steps: usize,
    pub alpha_rate: LearningRate,
    pub lambda_rate: LearningRate,
    pub center_rule: CenterRule,
    /// Initial bandwidth; defaults to the median pairwise distance of the centers.
    pub init_lambda: Option<f64>,
    /// Bandwidth floor; defaults to `1e-3 · λ₀`.
    pub lambda_floor: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sgd_steps: 4000,
            alpha_rate: LearningRate {
                initial: 0.03,
                decay_steps: Some(2000.0),
            },
            lambda_rate: LearningRate {
                initial: 0.03,
                decay_steps: Some(2000.0),
            },
            center_rule: CenterRule::UniformSubsample,
            init_lambda: None,
            lambda_floor: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.alpha_rate, self.lambda_rate];
        let bad_rate = rates
            .iter()
            .any(|r| !(r.initial > 0.0) || r.decay_steps.is_some_and(|s| !(s > 0.0)));
        if self.sgd_steps == 0 || bad_rate {
            return Err(Error::config("SGD needs S >= 1 and positive learning rates"));
        }
        if self.lambda_floor.is_some_and(|f| !(f > 0.0)) || self.init_lambda.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::config("lambda_floor and init_lambda must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub step: usize,
    /// Sample used at this step; `None` for the full-average loss at step 0.
    pub sample_index: Option<usize>,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `S + 1` entries: the initial average loss, then the single-sample loss
    /// seen by each SGD step (before its update).
    pub trace: Vec<LossEntry>,
    /// `(1/N) Σ (Ŷ(X̃^i) − Ỹ^i)²` at the final parameters.
    pub final_loss: f64,
    /// Norm of the full-batch gradient at the final parameters.
    pub final_grad_norm: f64,
    pub lambda_floor: f64,
}

impl LossReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "sample_index", "loss"])?;
        for e in &self.trace {
            let idx = e.sample_index.map(|i| i.to_string()).unwrap_or_default();
            w.write_record([e.step.to_string(), idx, e.loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Chooses `L` particle indices (returned in ascending order).
pub fn select_centers(cloud: &ParticleCloud, l: usize, rule: CenterRule, rng: &mut StreamRng) -> Result<Vec<usize>> {
    let n = cloud.len();
    if l == 0 || l > n {
        return Err(Error::config(format!("need 1 <= L <= N, got L={l}, N={n}")));
    }
    let mut picked = match rule {
        CenterRule::UniformSubsample => rand::seq::index::sample(rng, n, l).into_vec(),
        CenterRule::WeightedSubsample => {
            // Efraimidis–Spirakis keys u^{1/w}; zero-weight particles rank last
            // by index.
            let mut keyed: Vec<(f64, usize)> = cloud
                .values
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let u: f64 = rng.random();
                    let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
                    (key, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().take(l).map(|(_, i)| i).collect()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Single-sample loss `(Ŷ(x) − y)²` and its analytic gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub residual: f64,
    /// `2(Ŷ − y) φ^l`
    pub alpha: Vec<f64>,
    /// `2(Ŷ − y) α^l φ^l · 2|x − X̂^l|² / (λ^l)³`
    pub lambda: Vec<f64>,
}

pub fn loss_and_gradients(kd: &KernelDensity, x: &[f64], y: f64, lambda_floor: f64) -> Result<Gradients> {
    if let Some((l, &b)) = kd.bandwidths().iter().enumerate().find(|(_, b)| **b < lambda_floor) {
        return Err(Error::BandwidthBelowFloor {
            component: l,
            value: b,
            floor: lambda_floor,
        });
    }
    Ok(gradients_unchecked(kd, x, y))
}

fn gradients_unchecked(kd: &KernelDensity, x: &[f64], y: f64) -> Gradients {
    let l = kd.len();
    let mut phis = Vec::with_capacity(l);
    let mut d2 = Vec::with_capacity(l);
    let mut yhat = 0.0;
    for j in 0..l {
        let dist = sq_dist(x, kd.center(j));
        let lam = kd.bandwidths()[j];
        let p = (-dist / (lam * lam)).exp();
        yhat += kd.weights()[j] * p;
        phis.push(p);
        d2.push(dist);
    }
    let residual = yhat - y;
    let alpha = phis.iter().map(|p| 2.0 * residual * p).collect();
    let lambda = (0..l)
        .map(|j| {
            let lam = kd.bandwidths()[j];
            2.0 * residual * kd.weights()[j] * phis[j] * 2.0 * d2[j] / (lam * lam * lam)
        })
        .collect();
    Gradients {
        loss: residual * residual,
        residual,
        alpha,
        lambda,
    }
}

/// Average loss over a training set (locations row-major).
pub fn mean_loss(kd: &KernelDensity, xs: &[f64], ys: &[f64]) -> f64 {
    let d = kd.dim();
    xs.chunks_exact(d)
        .zip(ys)
        .map(|(x, y)| (kd.eval(x) - y).powi(2))
        .sum::<f64>()
        / ys.len() as f64
}

fn full_gradient_norm(kd: &KernelDensity, xs: &[f64], ys: &[f64]) -> f64 {
    let l = kd.len();
    let mut g = vec![0.0; 2 * l];
    for (x, y) in xs.chunks_exact(kd.dim()).zip(ys) {
        let gr = gradients_unchecked(kd, x, *y);
        for j in 0..l {
            g[j] += gr.alpha[j];
            g[l + j] += gr.lambda[j];
        }
    }
    let n = ys.len() as f64;
    g.iter().map(|v| (v / n) * (v / n)).sum::<f64>().sqrt()
}

fn median_pairwise_distance(points: &[f64], dim: usize) -> Option<f64> {
    let n = points.len() / dim;
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            dists.push(sq_dist(&points[a * dim..(a + 1) * dim], &points[b * dim..(b + 1) * dim]).sqrt());
        }
    }
    if dists.is_empty() {
        return None;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    (med > 0.0).then_some(med)
}

fn rms_spread(points: &[f64], dim: usize) -> Option<f64> {
    let n = points.len() / dim;
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for j in 0..dim {
        let mean = points.iter().skip(j).step_by(dim).sum::<f64>() / n as f64;
        total += points.iter().skip(j).step_by(dim).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    }
    let s = (total / dim as f64).sqrt();
    (s > 0.0).then_some(s)
}

/// Initial kernel density on the chosen centers: `λ₀` is the median pairwise
/// center distance and `α^l = Ỹ(X̂^l) / (L (λ₀ √π)^d)`.
pub fn initial_density(training: &ParticleCloud, centers: &[usize], cfg: &TrainConfig) -> Result<KernelDensity> {
    let d = training.dim;
    let l = centers.len();
    let coords: Vec<f64> = centers.iter().flat_map(|&i| training.location(i).iter().copied()).collect();
    let lambda0 = cfg
        .init_lambda
        .or_else(|| median_pairwise_distance(&coords, d))
        .or_else(|| rms_spread(&training.locations, d))
        .unwrap_or(1.0);
    let norm = l as f64 * (lambda0 * std::f64::consts::PI.sqrt()).powi(d as i32);
    let weights = centers.iter().map(|&i| training.values[i] / norm).collect();
    KernelDensity::new(d, coords, weights, vec![lambda0; l])
}

/// Selects centers, initializes, and runs `S` SGD steps.
pub fn sgd_fit(
    training: &ParticleCloud,
    l: usize,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<(KernelDensity, LossReport)> {
    cfg.validate()?;
    let centers = select_centers(training, l, cfg.center_rule, rng)?;
    let init = initial_density(training, &centers, cfg)?;
    let floor = cfg.lambda_floor.unwrap_or(1e-3 * init.bandwidths()[0]);
    fit_from(init, &training.locations, &training.values, cfg, floor, rng)
}

/// SGD from a given starting density. Each step evaluates the residual at the
/// previous parameters, updates α and λ together, then clamps λ at the floor.
pub fn fit_from(
    mut kd: KernelDensity,
    xs: &[f64],
    ys: &[f64],
    cfg: &TrainConfig,
    lambda_floor: f64,
    rng: &mut StreamRng,
) -> Result<(KernelDensity, LossReport)> {
    cfg.validate()?;
    let d = kd.dim();
    let n = ys.len();
    if n == 0 || xs.len() != n * d {
        return Err(Error::config("training set is empty or has the wrong dimension"));
    }
    if !(lambda_floor > 0.0) {
        return Err(Error::config("lambda_floor must be positive"));
    }
    {
        let (_, lambdas) = kd.params_mut();
        lambdas.iter_mut().for_each(|b| *b = b.max(lambda_floor));
    }
    let mut trace = Vec::with_capacity(cfg.sgd_steps + 1);
    trace.push(LossEntry {
        step: 0,
        sample_index: None,
        loss: mean_loss(&kd, xs, ys),
    });
    for s in 1..=cfg.sgd_steps {
        let i = rng.random_range(0..n);
        let g = gradients_unchecked(&kd, &xs[i * d..(i + 1) * d], ys[i]);
        trace.push(LossEntry {
            step: s,
            sample_index: Some(i),
            loss: g.loss,
        });
        let (ra, rl) = (cfg.alpha_rate.at(s - 1), cfg.lambda_rate.at(s - 1));
        let (alphas, lambdas) = kd.params_mut();
        for j in 0..alphas.len() {
            alphas[j] -= ra * g.alpha[j];
            lambdas[j] = (lambdas[j] - rl * g.lambda[j]).max(lambda_floor);
        }
        if alphas.iter().chain(lambdas.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DivergentLearning { step: s });
        }
    }
    let report = LossReport {
        final_loss: mean_loss(&kd, xs, ys),
        final_grad_norm: full_gradient_norm(&kd, xs, ys),
        trace,
        lambda_floor,
    };
    Ok((kd, report))
}

/// `u = (φ^1..φ^L, α^1φ^1A^1..α^Lφ^LA^L)` with `A^l = 2|x − X̂^l|²/(λ^l)³`;
/// the asymptotic Hessian is `2uuᵀ`.
pub fn asymptotic_factor(kd: &KernelDensity, x: &[f64]) -> DVector<f64> {
    let l = kd.len();
    DVector::from_fn(2 * l, |r, _| {
        let j = r % l;
        let lam = kd.bandwidths()[j];
        let d2 = sq_dist(x, kd.center(j));
        let p = phi(x, kd.center(j), lam);
        if r < l {
            p
        } else {
            kd.weights()[j] * p * 2.0 * d2 / (lam * lam * lam)
        }
    })
}

/// Hessian of `(Ŷ(x) − y)²` in `(α^1..α^L, λ^1..λ^L)`. With `asymptotic` every
/// term carrying the residual `Ŷ − y` is dropped.
pub fn hessian(kd: &KernelDensity, x: &[f64], y: f64, asymptotic: bool) -> DMatrix<f64> {
    let l = kd.len();
    let u = asymptotic_factor(kd, x);
    let mut h = &u * u.transpose() * 2.0;
    if !asymptotic {
        let r = kd.eval(x) - y;
        for j in 0..l {
            let lam = kd.bandwidths()[j];
            let d2 = sq_dist(x, kd.center(j));
            let p = phi(x, kd.center(j), lam);
            let a = 2.0 * d2 / (lam * lam * lam);
            let alpha = kd.weights()[j];
            // ∂²φ/∂λ² = φ (A² − 6|x − X̂|²/λ⁴)
            h[(l + j, l + j)] += 2.0 * r * alpha * p * (a * a - 6.0 * d2 / lam.powi(4));
            // ∂²φ/∂α∂λ carries the residual through ∂φ/∂λ = φA
            h[(j, l + j)] += 2.0 * r * p * a;
            h[(l + j, j)] += 2.0 * r * p * a;
        }
    }
    h
}

/// Hessian of the average loss over a training set.
pub fn hessian_mean(kd: &KernelDensity, xs: &[f64], ys: &[f64], asymptotic: bool) -> DMatrix<f64> {
    let l = kd.len();
    let mut h = DMatrix::zeros(2 * l, 2 * l);
    for (x, y) in xs.chunks_exact(kd.dim()).zip(ys) {
        h += hessian(kd, x, *y, asymptotic);
    }
    h / ys.len() as f64
}
