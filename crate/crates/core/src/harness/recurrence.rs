//! Monte-Carlo estimate of the per-step error amplification factor
//! `R = 2√(1 + T²G²) · sup_k E^x[p(O_k|S)] / E[p(O_k|S_k)]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{Likelihood, LOG_UNDERFLOW};
use crate::error::{Error, Result};
use crate::model::{backward_sample, euler_step, StateSpaceModel, TimeGrid};
use crate::rng::{normal_vec, Purpose, Streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceStep {
    pub k: usize,
    /// Largest mean likelihood over backward samples from the probes.
    pub numerator: f64,
    /// Mean likelihood over forward-propagated prior samples.
    pub denominator: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceEstimate {
    /// Max `|div g|` over the forward-propagated samples.
    pub divergence_bound: f64,
    pub horizon: f64,
    pub steps: Vec<RecurrenceStep>,
    /// `R̂`; infinite when a denominator underflowed.
    pub coefficient: f64,
    pub below_one: bool,
    /// Set when some denominator fell below `exp(-700)`.
    pub underflow: bool,
}

/// `samples` prior draws are propagated forward by Euler–Maruyama; at each
/// step the probes are the sample mean plus {−2,−1,0,1,2} sample standard
/// deviations (per coordinate), each with `samples` backward draws.
pub fn estimate_recurrence_coefficient<M: StateSpaceModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    observations: &[Vec<f64>],
    samples: usize,
    streams: &Streams,
) -> Result<RecurrenceEstimate> {
    if samples == 0 {
        return Err(Error::config("recurrence estimate needs at least one sample"));
    }
    if observations.len() != grid.steps() + 1 {
        return Err(Error::config("recurrence estimate needs one observation per grid knot"));
    }
    let d = model.dim_state();
    let mut states: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| model.sample_initial(&mut streams.stream(Purpose::Diagnostic, 0, i as u64)))
        .collect();
    let max_div = |xs: &[Vec<f64>]| xs.iter().map(|x| model.drift_divergence(x).abs()).fold(0.0, f64::max);
    let mut g_hat = max_div(&states);
    let mut steps = Vec::with_capacity(grid.steps());
    let floor = LOG_UNDERFLOW.exp();
    let mut underflow = false;
    for k in 1..=grid.steps() {
        let (t_prev, t_k, dt) = (grid.time(k - 1), grid.time(k), grid.dt(k));
        let moved: Vec<Result<Vec<f64>>> = states
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let dw = normal_vec(&mut streams.stream(Purpose::Diagnostic, k as u64, i as u64), dt, model.dim_noise());
                euler_step(model, t_prev, x, dt, &dw)
            })
            .collect();
        states = Error::collect_particles(moved)?;
        g_hat = g_hat.max(max_div(&states));
        let lik = Likelihood::new(model, t_k, dt, &observations[k - 1], &observations[k])?;
        let denominator = states.iter().map(|x| lik.density(x)).sum::<f64>() / samples as f64;

        let n = samples as f64;
        let mean: Vec<f64> = (0..d).map(|j| states.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let sd: Vec<f64> = (0..d)
            .map(|j| (states.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let mut numerator: f64 = 0.0;
        for (p, c) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
            let probe: Vec<f64> = (0..d).map(|j| mean[j] + c * sd[j]).collect();
            let stream_base = (k as u64) << 8 | p as u64;
            let liks: Vec<Result<f64>> = (0..samples as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = streams.stream(Purpose::Backward, stream_base, i);
                    let dw = normal_vec(&mut rng, dt, model.dim_noise());
                    Ok(lik.density(&backward_sample(model, t_k, &probe, dt, &dw)?))
                })
                .collect();
            let mean_lik = Error::collect_particles(liks)?.iter().sum::<f64>() / n;
            numerator = numerator.max(mean_lik);
        }
        // every likelihood at the floor means the observation is unexplained
        underflow |= denominator <= floor * (1.0 + 1e-9);
        steps.push(RecurrenceStep {
            k,
            numerator,
            denominator,
        });
    }
    let horizon = grid.horizon() - grid.t0();
    let worst = steps.iter().map(|s| s.numerator / s.denominator).fold(0.0, f64::max);
    let coefficient = if underflow {
        f64::INFINITY
    } else {
        2.0 * (1.0 + horizon * horizon * g_hat * g_hat).sqrt() * worst
    };
    Ok(RecurrenceEstimate {
        divergence_bound: g_hat,
        horizon,
        steps,
        coefficient,
        below_one: coefficient < 1.0,
        underflow,
    })
}
