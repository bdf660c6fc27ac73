//! C ABI for the FBSDE filter.
//!
//! Every function returns an [`FbsdeStatus`]; on failure the message is kept
//! per thread and can be copied out with [`fbsde_last_error_message`]. Objects
//! are opaque handles created by `*_new` and released by the matching
//! `*_free`. Arrays are passed as pointer plus length; a length mismatch is
//! reported as [`FbsdeStatus::InvalidArgument`], never read past.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use fbsde_filter::filter::{self, FilterConfig, FilterState};
use fbsde_filter::kde::KernelDensity;
use fbsde_filter::model::{simulate_truth, ModelRegistry, ObsQuadrature, StateSpaceModel, TimeGrid};
use fbsde_filter::predict::PredictVariant;
use fbsde_filter::rng::Streams;
use fbsde_filter::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownModel = 3,
    Config = 4,
    /// Numerical failure inside the filter (divergence, underflow, ...).
    Numerical = 5,
    /// The filter already reached its last time step.
    Finished = 6,
    /// The destination buffer is too small; the required size was written.
    BufferTooSmall = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

/// Prediction scheme selector; stored as its integer value in
/// [`FbsdeFilterConfig::variant`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbsdeVariant {
    RightPointFixedPoint = 0,
    LeftPoint = 1,
}

/// Plain-data subset of the filter settings. Start from
/// [`fbsde_filter_config_default`] and override fields.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FbsdeFilterConfig {
    pub particles: usize,
    pub centers: usize,
    pub steps: usize,
    pub dt: f64,
    pub t0: f64,
    pub mc_samples: usize,
    /// An [`FbsdeVariant`] value.
    pub variant: u32,
    pub sgd_steps: usize,
    pub alpha_rate: f64,
    pub lambda_rate: f64,
    pub seed: u64,
}

/// A model from the built-in zoo.
pub struct FbsdeModel {
    inner: Arc<dyn StateSpaceModel>,
}

/// A running filter: configuration plus the current state.
pub struct FbsdeFilter {
    model: Arc<dyn StateSpaceModel>,
    cfg: FilterConfig,
    grid: TimeGrid,
    state: FilterState,
}

/// A learned Gaussian kernel density.
pub struct FbsdeKernelDensity {
    inner: KernelDensity,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> FbsdeStatus {
    match err {
        Error::UnknownModel(_) => FbsdeStatus::UnknownModel,
        Error::Config(_) | Error::Parse { .. } => FbsdeStatus::Config,
        Error::AtStep { source, .. } => status_of(source),
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => FbsdeStatus::Internal,
        _ => FbsdeStatus::Numerical,
    }
}

struct Failure(FbsdeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FbsdeStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FbsdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FbsdeStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            FbsdeStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| Failure(FbsdeStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure(FbsdeStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(FbsdeStatus::NullPointer, format!("{what} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(FbsdeStatus::NullPointer, format!("{what} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn to_config(c: &FbsdeFilterConfig) -> Result<FilterConfig, Failure> {
    let mut cfg = FilterConfig {
        particles: c.particles,
        centers: c.centers,
        steps: c.steps,
        dt: c.dt,
        t0: c.t0,
        seed: c.seed,
        ..FilterConfig::default()
    };
    cfg.predict.mc_samples = c.mc_samples;
    cfg.predict.variant = match c.variant {
        v if v == FbsdeVariant::RightPointFixedPoint as u32 => PredictVariant::RightPointFixedPoint,
        v if v == FbsdeVariant::LeftPoint as u32 => PredictVariant::LeftPoint,
        v => return Err(invalid(format!("unknown prediction variant {v}"))),
    };
    cfg.train.sgd_steps = c.sgd_steps;
    cfg.train.alpha_rate.initial = c.alpha_rate;
    cfg.train.lambda_rate.initial = c.lambda_rate;
    Ok(cfg)
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string. `*len` holds the buffer size on entry and the
/// size needed (including the NUL) on return.
///
/// # Safety
/// `buf` must point to `*len` writable bytes (or be null with `*len == 0`).
#[no_mangle]
pub unsafe extern "C" fn fbsde_last_error_message(buf: *mut c_char, len: *mut usize) -> FbsdeStatus {
    let Some(len) = (unsafe { len.as_mut() }) else {
        return FbsdeStatus::NullPointer;
    };
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let need = msg.len() + 1;
    let have = *len;
    *len = need;
    if have < need || buf.is_null() {
        return FbsdeStatus::BufferTooSmall;
    }
    unsafe {
        ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
        *buf.add(msg.len()) = 0;
    }
    FbsdeStatus::Ok
}

/// Looks up a model of the built-in zoo ("linear1d", "ou1d",
/// "doublewell1d", "linear2d").
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_model_new(name: *const c_char, out: *mut *mut FbsdeModel) -> FbsdeStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        *out = ptr::null_mut();
        if name.is_null() {
            return Err(Failure(FbsdeStatus::NullPointer, "name is null".into()));
        }
        let name = unsafe { CStr::from_ptr(name) }
            .to_str()
            .map_err(|_| invalid("model name is not UTF-8"))?;
        let inner = ModelRegistry::default().get(name)?;
        *out = Box::into_raw(Box::new(FbsdeModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`fbsde_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbsde_model_free(model: *mut FbsdeModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// State and observation dimensions.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbsde_model_dims(
    model: *const FbsdeModel,
    dim_state: *mut usize,
    dim_obs: *mut usize,
) -> FbsdeStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        *unsafe { deref_mut(dim_state, "dim_state") }? = m.inner.dim_state();
        *unsafe { deref_mut(dim_obs, "dim_obs") }? = m.inner.dim_obs();
        Ok(())
    })
}

/// Simulates a truth path on `steps` steps of size `dt` from `t = 0`. The
/// caller provides `(steps + 1) * dim_state` and `(steps + 1) * dim_obs`
/// doubles, filled row by row.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn fbsde_model_simulate(
    model: *const FbsdeModel,
    steps: usize,
    dt: f64,
    seed: u64,
    states: *mut f64,
    states_len: usize,
    observations: *mut f64,
    observations_len: usize,
) -> FbsdeStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let (d, dy) = (m.inner.dim_state(), m.inner.dim_obs());
        let rows = steps + 1;
        if states_len != rows * d || observations_len != rows * dy {
            return Err(invalid(format!(
                "need {} state and {} observation values, got {states_len} and {observations_len}",
                rows * d,
                rows * dy
            )));
        }
        let states = unsafe { slice_mut(states, states_len, "states") }?;
        let observations = unsafe { slice_mut(observations, observations_len, "observations") }?;
        let grid = TimeGrid::uniform(0.0, dt * steps as f64, steps)?;
        let traj = simulate_truth(m.inner.as_ref(), &grid, &Streams::new(seed), ObsQuadrature::Right)?;
        for (dst, src) in states.chunks_exact_mut(d).zip(&traj.states) {
            dst.copy_from_slice(src);
        }
        for (dst, src) in observations.chunks_exact_mut(dy).zip(&traj.observations) {
            dst.copy_from_slice(src);
        }
        Ok(())
    })
}

/// Fills `out` with the library defaults.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_filter_config_default(out: *mut FbsdeFilterConfig) -> FbsdeStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        let d = FilterConfig::default();
        *out = FbsdeFilterConfig {
            particles: d.particles,
            centers: d.centers,
            steps: d.steps,
            dt: d.dt,
            t0: d.t0,
            mc_samples: d.predict.mc_samples,
            variant: match d.predict.variant {
                PredictVariant::RightPointFixedPoint => FbsdeVariant::RightPointFixedPoint,
                PredictVariant::LeftPoint => FbsdeVariant::LeftPoint,
            } as u32,
            sgd_steps: d.train.sgd_steps,
            alpha_rate: d.train.alpha_rate.initial,
            lambda_rate: d.train.lambda_rate.initial,
            seed: d.seed,
        };
        Ok(())
    })
}

/// Creates a filter at `t0` with particles drawn from the initial density.
/// The model handle may be freed afterwards.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbsde_filter_new(
    model: *const FbsdeModel,
    config: *const FbsdeFilterConfig,
    out: *mut *mut FbsdeFilter,
) -> FbsdeStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        *out = ptr::null_mut();
        let m = unsafe { deref(model, "model") }?;
        let cfg = to_config(unsafe { deref(config, "config") }?)?;
        cfg.validate()?;
        let grid = cfg.grid()?;
        let state = filter::initialize(m.inner.as_ref(), &cfg)?;
        *out = Box::into_raw(Box::new(FbsdeFilter {
            model: Arc::clone(&m.inner),
            cfg,
            grid,
            state,
        }));
        Ok(())
    })
}

/// # Safety
/// `filter` must come from [`fbsde_filter_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbsde_filter_free(filter: *mut FbsdeFilter) {
    if !filter.is_null() {
        drop(unsafe { Box::from_raw(filter) });
    }
}

/// Advances one step using the observation path at the previous and the
/// new time (each `dim_obs` values). On failure the filter is unchanged.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fbsde_filter_step(
    filter: *mut FbsdeFilter,
    obs_prev: *const f64,
    obs_now: *const f64,
    dim_obs: usize,
) -> FbsdeStatus {
    guard(|| {
        let f = unsafe { deref_mut(filter, "filter") }?;
        if f.state.k >= f.grid.steps() {
            return Err(Failure(FbsdeStatus::Finished, format!("filter already at k = {}", f.state.k)));
        }
        if dim_obs != f.model.dim_obs() {
            return Err(invalid(format!("observation dimension is {}, got {dim_obs}", f.model.dim_obs())));
        }
        let prev = unsafe { slice(obs_prev, dim_obs, "obs_prev") }?;
        let now = unsafe { slice(obs_now, dim_obs, "obs_now") }?;
        f.state = filter::step(&f.state, f.model.as_ref(), &f.grid, prev, now, &f.cfg)?;
        Ok(())
    })
}

/// Current time index k (0 before the first step).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbsde_filter_step_index(filter: *const FbsdeFilter, k: *mut usize) -> FbsdeStatus {
    guard(|| {
        let f = unsafe { deref(filter, "filter") }?;
        *unsafe { deref_mut(k, "k") }? = f.state.k;
        Ok(())
    })
}

/// Posterior mean and per-coordinate variance (each `dim_state` values);
/// `variance` may be null.
///
/// # Safety
/// Non-null buffers must hold `dim_state` doubles.
#[no_mangle]
pub unsafe extern "C" fn fbsde_filter_moments(
    filter: *const FbsdeFilter,
    mean: *mut f64,
    variance: *mut f64,
    dim_state: usize,
) -> FbsdeStatus {
    guard(|| {
        let f = unsafe { deref(filter, "filter") }?;
        if dim_state != f.model.dim_state() {
            return Err(invalid(format!("state dimension is {}, got {dim_state}", f.model.dim_state())));
        }
        unsafe { slice_mut(mean, dim_state, "mean") }?.copy_from_slice(&f.state.posterior_mean(f.model.as_ref()));
        if !variance.is_null() {
            unsafe { slice_mut(variance, dim_state, "variance") }?
                .copy_from_slice(&f.state.posterior_variance(f.model.as_ref()));
        }
        Ok(())
    })
}

/// Copies out the learned density of the current step. Fails with
/// `InvalidArgument` at k = 0, where no density has been learned yet.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbsde_filter_density(
    filter: *const FbsdeFilter,
    out: *mut *mut FbsdeKernelDensity,
) -> FbsdeStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        *out = ptr::null_mut();
        let f = unsafe { deref(filter, "filter") }?;
        let kd = f
            .state
            .density
            .kernel()
            .ok_or_else(|| invalid("no learned density before the first step"))?;
        *out = Box::into_raw(Box::new(FbsdeKernelDensity { inner: kd.clone() }));
        Ok(())
    })
}

/// # Safety
/// `kd` must come from [`fbsde_filter_density`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbsde_kd_free(kd: *mut FbsdeKernelDensity) {
    if !kd.is_null() {
        drop(unsafe { Box::from_raw(kd) });
    }
}

/// Number of kernel components and state dimension.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbsde_kd_shape(
    kd: *const FbsdeKernelDensity,
    components: *mut usize,
    dim: *mut usize,
) -> FbsdeStatus {
    guard(|| {
        let kd = unsafe { deref(kd, "kd") }?;
        *unsafe { deref_mut(components, "components") }? = kd.inner.len();
        *unsafe { deref_mut(dim, "dim") }? = kd.inner.dim();
        Ok(())
    })
}

/// Evaluates the density at one point of `dim` coordinates.
///
/// # Safety
/// `x` must hold `dim` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_kd_eval(
    kd: *const FbsdeKernelDensity,
    x: *const f64,
    dim: usize,
    value: *mut f64,
) -> FbsdeStatus {
    guard(|| {
        let kd = unsafe { deref(kd, "kd") }?;
        if dim != kd.inner.dim() {
            return Err(invalid(format!("density dimension is {}, got {dim}", kd.inner.dim())));
        }
        let x = unsafe { slice(x, dim, "x") }?;
        *unsafe { deref_mut(value, "value") }? = kd.inner.eval(x);
        Ok(())
    })
}

/// Total mass of the density (the integral of the kernel mixture).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fbsde_kd_mass(kd: *const FbsdeKernelDensity, mass: *mut f64) -> FbsdeStatus {
    guard(|| {
        let kd = unsafe { deref(kd, "kd") }?;
        *unsafe { deref_mut(mass, "mass") }? = kd.inner.mass();
        Ok(())
    })
}
