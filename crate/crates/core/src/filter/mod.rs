//! The running filter: predict, update, learn, resample, repeated over the
//! time grid. Baselines for comparison live in [`kalman`] and [`bootstrap`].

pub mod bootstrap;
pub mod kalman;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{bayes_update, denominator_mc, Likelihood, LOG_UNDERFLOW};
use crate::error::{Error, Result};
use crate::kde::{DensityFn, KernelDensity};
use crate::learn::{sgd_fit, LossReport, TrainConfig};
use crate::model::{StateSpaceModel, TimeGrid};
use crate::predict::{contraction_guard, predict_cloud, ParticleCloud, PredictConfig, PredictVariant, Stage};
use crate::rng::{Purpose, StreamRng, Streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// N
    pub particles: usize,
    /// L
    pub centers: usize,
    /// K
    pub steps: usize,
    pub dt: f64,
    pub t0: f64,
    pub predict: PredictConfig,
    /// SGD settings, including S.
    pub train: TrainConfig,
    pub seed: u64,
    /// Warn when the negative part of the learned density exceeds this
    /// fraction of its absolute mass.
    pub negative_mass_warning: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 2000,
            centers: 32,
            steps: 10,
            dt: 0.1,
            t0: 0.0,
            predict: PredictConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            negative_mass_warning: 0.05,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.centers == 0 || self.steps == 0 {
            return Err(Error::config("N, L and K must be positive"));
        }
        if self.centers > self.particles {
            return Err(Error::config(format!(
                "L={} exceeds N={}",
                self.centers, self.particles
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !self.t0.is_finite() {
            return Err(Error::config("dt must be positive and t0 finite"));
        }
        self.predict.validate()?;
        self.train.validate()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t0, self.t0 + self.dt * self.steps as f64, self.steps)
    }
}

/// The posterior density carried between steps: `p_0` itself at k = 0, the
/// learned kernel density afterwards.
#[derive(Clone, Debug, PartialEq)]
pub enum PosteriorDensity {
    Initial,
    Kernel(KernelDensity),
}

impl PosteriorDensity {
    pub fn eval<M: StateSpaceModel + ?Sized>(&self, model: &M, x: &[f64]) -> f64 {
        match self {
            PosteriorDensity::Initial => model.initial_density(x),
            PosteriorDensity::Kernel(kd) => kd.eval(x),
        }
    }

    pub fn kernel(&self) -> Option<&KernelDensity> {
        match self {
            PosteriorDensity::Kernel(kd) => Some(kd),
            PosteriorDensity::Initial => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub k: usize,
    /// Monte-Carlo estimate of `E[p(O_k | S_k)]` over the prior particles.
    pub denominator: f64,
    pub acceptance_rate: f64,
    pub negative_mass_fraction: f64,
    pub kd_mass: f64,
}

#[derive(Clone, Debug)]
pub struct FilterState {
    pub k: usize,
    /// Posterior cloud after resampling.
    pub cloud: ParticleCloud,
    pub density: PosteriorDensity,
    /// `None` at k = 0.
    pub diagnostics: Option<StepDiagnostics>,
    pub loss: Option<LossReport>,
}

impl FilterState {
    /// Posterior mean: the analytic `p_0` mean at k = 0 (cloud mean if
    /// unknown), the mass-normalized mixture mean of the learned density after.
    pub fn posterior_mean<M: StateSpaceModel + ?Sized>(&self, model: &M) -> Vec<f64> {
        match &self.density {
            PosteriorDensity::Initial => model
                .initial_moments()
                .map(|(m, _)| m.iter().copied().collect())
                .unwrap_or_else(|| self.cloud.mean_location()),
            PosteriorDensity::Kernel(kd) => kd.mean().unwrap_or_else(|| self.cloud.mean_location()),
        }
    }

    /// Per-coordinate posterior variance, same conventions as the mean.
    pub fn posterior_variance<M: StateSpaceModel + ?Sized>(&self, model: &M) -> Vec<f64> {
        let cloud_var = || {
            let mean = self.cloud.mean_location();
            let n = self.cloud.len() as f64;
            (0..self.cloud.dim)
                .map(|j| {
                    (0..self.cloud.len())
                        .map(|i| (self.cloud.location(i)[j] - mean[j]).powi(2))
                        .sum::<f64>()
                        / n
                })
                .collect()
        };
        match &self.density {
            PosteriorDensity::Initial => model
                .initial_moments()
                .map(|(_, c)| c.diagonal().iter().copied().collect())
                .unwrap_or_else(cloud_var),
            PosteriorDensity::Kernel(kd) => kd.variance().unwrap_or_else(cloud_var),
        }
    }
}

/// Draws N particles from `p_0`, particle i from stream `(Initial, 0, i)`.
pub fn initialize<M: StateSpaceModel + ?Sized>(model: &M, cfg: &FilterConfig) -> Result<FilterState> {
    cfg.validate()?;
    let streams = Streams::new(cfg.seed);
    let d = model.dim_state();
    let draws: Vec<Vec<f64>> = (0..cfg.particles)
        .into_par_iter()
        .map(|i| model.sample_initial(&mut streams.stream(Purpose::Initial, 0, i as u64)))
        .collect();
    let mut locations = Vec::with_capacity(cfg.particles * d);
    for x in &draws {
        if x.len() != d || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("initial sampler returned {x:?}")));
        }
        locations.extend_from_slice(x);
    }
    let values = draws.iter().map(|x| model.initial_density(x)).collect();
    Ok(FilterState {
        k: 0,
        cloud: ParticleCloud::new(0, d, locations, values, Stage::Posterior)?,
        density: PosteriorDensity::Initial,
        diagnostics: None,
        loss: None,
    })
}

/// Values at or below this are treated as zero in the Metropolis ratio.
fn underflow_floor() -> f64 {
    LOG_UNDERFLOW.exp()
}

#[derive(Clone, Debug)]
pub struct ResampleOutcome {
    pub cloud: ParticleCloud,
    pub accepted: Vec<bool>,
}

impl ResampleOutcome {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len().max(1) as f64
    }
}

/// One Metropolis move per particle with a proposal drawn from `kd` and
/// acceptance probability `min{1, Y(new)/Y(old)}`, `Y` the learned density.
///
/// A proposal where `Y ≤ 0` is rejected. Every particle's value is then
/// re-evaluated as `max(Y(x), 0)` at its final location. Particle `i` uses
/// stream `(Resample, k, id_i)`.
pub fn metropolis_resample(cloud: &ParticleCloud, kd: &KernelDensity, streams: &Streams) -> Result<ResampleOutcome> {
    if !(kd.positive_mass() > 0.0) {
        return Err(Error::EmptyDensity);
    }
    let floor = underflow_floor();
    let moves: Vec<Result<(Vec<f64>, bool)>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(Purpose::Resample, cloud.k as u64, cloud.ids[i]);
            Ok(metropolis_move(cloud.location(i), kd, floor, &mut rng)?)
        })
        .collect();
    let moves = Error::collect_particles(moves)?;
    let mut locations = Vec::with_capacity(cloud.locations.len());
    let mut accepted = Vec::with_capacity(cloud.len());
    for (x, a) in moves {
        locations.extend(x);
        accepted.push(a);
    }
    let values = locations.chunks_exact(cloud.dim).map(|x| kd.eval(x).max(0.0)).collect();
    Ok(ResampleOutcome {
        cloud: ParticleCloud {
            k: cloud.k,
            dim: cloud.dim,
            locations,
            values,
            ids: cloud.ids.clone(),
            stage: Stage::Posterior,
        },
        accepted,
    })
}

fn metropolis_move(old: &[f64], kd: &KernelDensity, floor: f64, rng: &mut StreamRng) -> Result<(Vec<f64>, bool)> {
    let proposal = kd.sample(rng)?;
    let u: f64 = rng.random();
    let y_new = kd.eval(&proposal);
    let y_old = kd.eval(old).max(floor);
    if y_new > floor && u < y_new / y_old {
        Ok((proposal, true))
    } else {
        Ok((old.to_vec(), false))
    }
}

/// Advances the filter from `t_{k−1}` to `t_k` given the observation path
/// values at both times.
pub fn step<M: StateSpaceModel + ?Sized>(
    state: &FilterState,
    model: &M,
    grid: &TimeGrid,
    obs_prev: &[f64],
    obs_now: &[f64],
    cfg: &FilterConfig,
) -> Result<FilterState> {
    let k = state.k + 1;
    step_inner(state, model, grid, obs_prev, obs_now, cfg).map_err(|e| e.at_step(k))
}

fn step_inner<M: StateSpaceModel + ?Sized>(
    state: &FilterState,
    model: &M,
    grid: &TimeGrid,
    obs_prev: &[f64],
    obs_now: &[f64],
    cfg: &FilterConfig,
) -> Result<FilterState> {
    let k = state.k + 1;
    if k > grid.steps() {
        return Err(Error::config(format!("grid has only {} steps", grid.steps())));
    }
    let streams = Streams::new(cfg.seed);
    let (t_k, dt) = (grid.time(k), grid.dt(k));
    if cfg.predict.variant == PredictVariant::RightPointFixedPoint {
        contraction_guard(model, dt)?;
    }
    let density = &state.density;
    let prev_fn = |x: &[f64]| density.eval(model, x);
    let prior = predict_cloud(&state.cloud, &prev_fn as &dyn DensityFn, model, grid, k, &cfg.predict, &streams)?;

    let lik = Likelihood::new(model, t_k, dt, obs_prev, obs_now)?;
    let denominator = denominator_mc(&prior, &lik)?;
    let posterior = bayes_update(&prior, &lik)?;

    // Fit on the particles in id order so the learned density does not
    // depend on how the cloud happens to be arranged.
    let mut order: Vec<usize> = (0..posterior.len()).collect();
    order.sort_by_key(|&i| posterior.ids[i]);
    let mut fit_rng = streams.stream(Purpose::Sgd, k as u64, 0);
    let (kd, loss) = sgd_fit(&posterior.permuted(&order), cfg.centers, &cfg.train, &mut fit_rng)?;

    let outcome = metropolis_resample(&posterior, &kd, &streams)?;
    let diagnostics = StepDiagnostics {
        k,
        denominator,
        acceptance_rate: outcome.acceptance_rate(),
        negative_mass_fraction: kd.negative_mass_fraction(),
        kd_mass: kd.mass(),
    };
    if diagnostics.negative_mass_fraction > cfg.negative_mass_warning {
        log::warn!(
            "k={k}: {:.1}% of the learned density's mass is negative",
            100.0 * diagnostics.negative_mass_fraction
        );
    }
    log::debug!("k={k}: {diagnostics:?}, final loss {:e}", loss.final_loss);
    Ok(FilterState {
        k,
        cloud: outcome.cloud,
        density: PosteriorDensity::Kernel(kd),
        diagnostics: Some(diagnostics),
        loss: Some(loss),
    })
}

/// Runs K steps over an observation path `O_{t_0}, …, O_{t_K}`; returns the
/// states for k = 0..=K.
pub fn run_filter<M: StateSpaceModel + ?Sized>(
    model: &M,
    cfg: &FilterConfig,
    observations: &[Vec<f64>],
) -> Result<Vec<FilterState>> {
    run_filter_with(model, cfg, observations, |_| Ok(()))
}

/// [`run_filter`] that hands each state to `on_step` as soon as it exists,
/// so checkpoints survive a failure at a later step.
pub fn run_filter_with<M: StateSpaceModel + ?Sized>(
    model: &M,
    cfg: &FilterConfig,
    observations: &[Vec<f64>],
    mut on_step: impl FnMut(&FilterState) -> Result<()>,
) -> Result<Vec<FilterState>> {
    let grid = cfg.grid()?;
    if observations.len() != grid.steps() + 1 {
        return Err(Error::config(format!(
            "need {} observations for K={}, got {}",
            grid.steps() + 1,
            grid.steps(),
            observations.len()
        )));
    }
    let mut states = vec![initialize(model, cfg)?];
    on_step(&states[0])?;
    for k in 1..=grid.steps() {
        let next = step(&states[k - 1], model, &grid, &observations[k - 1], &observations[k], cfg)?;
        on_step(&next)?;
        states.push(next);
    }
    Ok(states)
}

/// Writes `kd_KKK.txt`, `particles_KKK.csv` and `diagnostics_KKK.json` for a
/// state after k ≥ 1 (only the particle table at k = 0).
pub fn write_checkpoint(state: &FilterState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let k = state.k;
    if let Some(kd) = state.density.kernel() {
        fs::write(dir.join(format!("kd_{k:03}.txt")), kd.to_records())?;
    }
    write_particles(&state.cloud, fs::File::create(dir.join(format!("particles_{k:03}.csv")))?)?;
    if let Some(diag) = &state.diagnostics {
        let mut f = fs::File::create(dir.join(format!("diagnostics_{k:03}.json")))?;
        serde_json::to_writer_pretty(&mut f, diag)?;
        writeln!(f)?;
    }
    Ok(())
}

/// CSV with header `index,x1,…,xd,value`.
pub fn write_particles<W: Write>(cloud: &ParticleCloud, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend((1..=cloud.dim).map(|j| format!("x{j}")));
    header.push("value".into());
    w.write_record(&header)?;
    for i in 0..cloud.len() {
        let mut row = vec![i.to_string()];
        row.extend(cloud.location(i).iter().map(|v| v.to_string()));
        row.push(cloud.values[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::learn::LearningRate;
    use crate::model::{LinearModel, ModelRegistry};

    fn small_cfg() -> FilterConfig {
        FilterConfig {
            particles: 300,
            centers: 16,
            steps: 2,
            dt: 0.1,
            predict: PredictConfig {
                mc_samples: 16,
                ..PredictConfig::default()
            },
            train: TrainConfig {
                sgd_steps: 800,
                ..TrainConfig::default()
            },
            seed: 5,
            ..FilterConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        assert!(cfg.validate().is_ok());
        cfg.centers = cfg.particles + 1;
        assert!(cfg.validate().is_err());
        cfg = small_cfg();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn narrow_initial_draws_stay_near_mean() {
        let model = LinearModel::scalar("narrow", 0.0, 0.1, 1.0, 1.0, Gaussian::isotropic(&[2.0], 1e-8).unwrap());
        let cfg = FilterConfig {
            particles: 3,
            centers: 1,
            ..small_cfg()
        };
        let state = initialize(&model, &cfg).unwrap();
        assert!(state.cloud.locations.iter().all(|x| (x - 2.0).abs() < 6e-4));
    }

    #[test]
    fn initial_density_is_exact() {
        let reg = ModelRegistry::default();
        let model = reg.get("doublewell1d").unwrap();
        let state = initialize(model.as_ref(), &small_cfg()).unwrap();
        for x in [-1.0, 0.3, 1.1, 2.5] {
            assert_eq!(state.density.eval(model.as_ref(), &[x]), model.initial_density(&[x]));
        }
        for i in 0..state.cloud.len() {
            assert_eq!(state.cloud.values[i], model.initial_density(state.cloud.location(i)));
        }
    }

    #[test]
    fn initial_moments_match_sampler() {
        let reg = ModelRegistry::default();
        let model = reg.get("linear2d").unwrap();
        let cfg = FilterConfig {
            particles: 100_000,
            ..small_cfg()
        };
        let state = initialize(model.as_ref(), &cfg).unwrap();
        let (mean, cov) = model.initial_moments().unwrap();
        let n = cfg.particles as f64;
        let emp = state.cloud.mean_location();
        for j in 0..2 {
            let se = (cov[(j, j)] / n).sqrt();
            assert!((emp[j] - mean[j]).abs() < 4.0 * se);
            let var = (0..cfg.particles)
                .map(|i| (state.cloud.location(i)[j] - emp[j]).powi(2))
                .sum::<f64>()
                / n;
            // Var of the sample variance of a normal is 2σ⁴/n
            assert!((var - cov[(j, j)]).abs() < 4.0 * cov[(j, j)] * (2.0 / n).sqrt());
        }
    }

    #[test]
    fn accepts_everything_when_ratio_exceeds_one() {
        // Particles sit where the density has underflowed, so every proposal
        // has a ratio above one.
        let kd = KernelDensity::new(1, vec![0.0], vec![1.0], vec![1.0]).unwrap();
        let n = 10_000;
        let cloud = ParticleCloud::new(1, 1, vec![1e3; n], vec![0.0; n], Stage::Posterior).unwrap();
        let out = metropolis_resample(&cloud, &kd, &Streams::new(1)).unwrap();
        assert!(out.acceptance_rate() > 0.999);
    }

    #[test]
    fn wide_kernel_acceptance_matches_analytic_rate() {
        // Old particles at the mode, proposals from N(0, λ²/2): the ratio is
        // exp(−Z²/2) with Z standard normal, whose mean is 1/√2.
        let kd = KernelDensity::new(1, vec![0.0], vec![1.0], vec![1e4]).unwrap();
        let n = 10_000;
        let cloud = ParticleCloud::new(1, 1, vec![0.0; n], vec![1.0; n], Stage::Posterior).unwrap();
        let rate = metropolis_resample(&cloud, &kd, &Streams::new(1)).unwrap().acceptance_rate();
        let p = std::f64::consts::FRAC_1_SQRT_2;
        assert!((rate - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{rate}");
    }

    #[test]
    fn zero_density_proposal_is_rejected() {
        // The positive component sits where the negative one dominates, so
        // every proposal near it has Y ≤ 0.
        let kd = KernelDensity::new(1, vec![0.0, 0.0, 50.0], vec![1.0, -5.0, 1e-6], vec![1.0, 1.5, 1.0]).unwrap();
        let cloud = ParticleCloud::new(1, 1, vec![50.0; 200], vec![1.0; 200], Stage::Posterior).unwrap();
        let out = metropolis_resample(&cloud, &kd, &Streams::new(2)).unwrap();
        for i in 0..200 {
            if !out.accepted[i] {
                assert_eq!(out.cloud.location(i), &[50.0]);
            } else {
                assert!(kd.eval(out.cloud.location(i)) > 0.0);
            }
        }
        assert!(out.accepted.iter().any(|a| !a));
        assert!(out.cloud.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn acceptance_invariant_under_weight_scaling() {
        let kd = KernelDensity::new(1, vec![-1.0, 0.5, 2.0], vec![0.3, 0.5, 0.2], vec![0.4, 0.6, 0.5]).unwrap();
        let locs: Vec<f64> = (0..500).map(|i| -3.0 + 0.012 * i as f64).collect();
        let cloud = ParticleCloud::new(1, 1, locs.clone(), vec![1.0; 500], Stage::Posterior).unwrap();
        let a = metropolis_resample(&cloud, &kd, &Streams::new(3)).unwrap();
        let b = metropolis_resample(&cloud, &kd.with_weights_scaled(10.0), &Streams::new(3)).unwrap();
        assert_eq!(a.accepted, b.accepted);
        assert_eq!(a.cloud.locations, b.cloud.locations);
    }

    #[test]
    fn empty_density_rejected() {
        let kd = KernelDensity::new(1, vec![0.0], vec![-1.0], vec![1.0]).unwrap();
        let cloud = ParticleCloud::new(1, 1, vec![0.0], vec![1.0], Stage::Posterior).unwrap();
        assert!(matches!(
            metropolis_resample(&cloud, &kd, &Streams::new(0)),
            Err(Error::EmptyDensity)
        ));
    }

    #[test]
    fn static_model_conserves_mass() {
        let model = LinearModel::scalar("static", 0.0, 0.0, 0.0, 1.0, Gaussian::isotropic(&[0.0], 1.0).unwrap());
        let cfg = FilterConfig {
            particles: 500,
            centers: 16,
            steps: 1,
            train: TrainConfig {
                sgd_steps: 3000,
                ..TrainConfig::default()
            },
            ..small_cfg()
        };
        let states = run_filter(&model, &cfg, &[vec![0.0], vec![0.3]]).unwrap();
        let mass = states[1].diagnostics.unwrap().kd_mass;
        assert!((mass - 1.0).abs() < 0.1, "mass {mass}");
    }

    #[test]
    fn permuted_particles_give_same_density() {
        let reg = ModelRegistry::default();
        let model = reg.get("linear1d").unwrap();
        let mut cfg = small_cfg();
        cfg.train.sgd_steps = 200;
        let grid = cfg.grid().unwrap();
        let s0 = initialize(model.as_ref(), &cfg).unwrap();
        let perm: Vec<usize> = (0..cfg.particles).map(|i| (i * 7 + 3) % cfg.particles).collect();
        let s0p = FilterState {
            cloud: s0.cloud.permuted(&perm),
            ..s0.clone()
        };
        let one = step(&s0, model.as_ref(), &grid, &[0.0], &[0.1], &cfg).unwrap();
        let two = step(&s0p, model.as_ref(), &grid, &[0.0], &[0.1], &cfg).unwrap();
        assert_eq!(one.density, two.density);
        assert_eq!(one.cloud.permuted(&perm), two.cloud);
    }

    #[test]
    fn one_step_matches_kalman() {
        let reg = ModelRegistry::default();
        let model = reg.get("linear1d").unwrap();
        let cfg = FilterConfig {
            particles: 2000,
            centers: 32,
            steps: 1,
            train: TrainConfig {
                sgd_steps: 4000,
                ..TrainConfig::default()
            },
            seed: 11,
            ..FilterConfig::default()
        };
        let obs = vec![vec![0.0], vec![0.08]];
        let states = run_filter(model.as_ref(), &cfg, &obs).unwrap();
        let spec = model.linear_gaussian().unwrap();
        let kf = kalman::kalman_filter(&spec, &cfg.grid().unwrap(), &obs).unwrap();
        let mean = states[1].posterior_mean(model.as_ref())[0];
        let (km, kc) = (&kf[1].0, &kf[1].1);
        let std = kc[(0, 0)].sqrt();
        assert!((mean - km[0]).abs() < 0.1 * std, "fbsde {mean} vs kalman {} (std {std})", km[0]);
    }

    #[test]
    fn checkpoint_files() {
        let reg = ModelRegistry::default();
        let model = reg.get("linear1d").unwrap();
        let mut cfg = small_cfg();
        cfg.steps = 1;
        cfg.train.alpha_rate = LearningRate::constant(0.05);
        let states = run_filter(model.as_ref(), &cfg, &[vec![0.0], vec![0.1]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_checkpoint(&states[1], dir.path()).unwrap();
        let kd = KernelDensity::from_records(&fs::read_to_string(dir.path().join("kd_001.txt")).unwrap()).unwrap();
        assert_eq!(&kd, states[1].density.kernel().unwrap());
        let csv = fs::read_to_string(dir.path().join("particles_001.csv")).unwrap();
        assert!(csv.starts_with("index,x1,value\n"));
        assert_eq!(csv.lines().count(), cfg.particles + 1);
        let diag: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("diagnostics_001.json")).unwrap()).unwrap();
        for key in ["k", "denominator", "acceptance_rate", "negative_mass_fraction", "kd_mass"] {
            assert!(diag.get(key).is_some(), "{key}");
        }
    }


    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

        proptest! {
            #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

            #[test]
            fn resample_keeps_ids_and_reevaluates(seed in 0u64..10_000, shift in -2.0f64..2.0, scale in 1e-3f64..1e3) {
                let kd = KernelDensity::new(1, vec![-1.0, 0.5, 2.0], vec![0.3, 0.5, -0.05], vec![0.4, 0.6, 0.5]).unwrap();
                let locs: Vec<f64> = (0..64).map(|i| shift - 1.5 + 0.05 * i as f64).collect();
                let cloud = ParticleCloud::new(1, 1, locs, vec![1.0; 64], Stage::Posterior).unwrap();
                let out = metropolis_resample(&cloud, &kd, &Streams::new(seed)).unwrap();
                prop_assert_eq!(&out.cloud.ids, &cloud.ids);
                for i in 0..64 {
                    prop_assert_eq!(out.cloud.values[i], kd.eval(out.cloud.location(i)).max(0.0));
                }
                let scaled = KernelDensity::new(
                    1,
                    kd.centers().to_vec(),
                    kd.weights().iter().map(|w| w * scale).collect(),
                    kd.bandwidths().to_vec(),
                )
                .unwrap();
                let again = metropolis_resample(&cloud, &scaled, &Streams::new(seed)).unwrap();
                prop_assert_eq!(again.accepted, out.accepted);
                prop_assert!(out.cloud.values.iter().all(|v| *v >= 0.0));
            }
        }
    }
}
