use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state update produced a non-finite component.
    #[error("model blow-up at t={t}: non-finite state {state:?}")]
    ModelBlowUp { t: f64, state: Vec<f64> },

    #[error("non-finite density value at backward sample {sample} (state {state:?})")]
    NonFiniteDensity { sample: usize, state: Vec<f64> },

    #[error(
        "fixed-point iteration diverged at iterate {iterate} (|Y|={value:e}); reduce dt (dt*|div g| must stay below 1) or use the left_point variant"
    )]
    ContractionFailure { iterate: usize, value: f64 },

    /// Per-particle failures, sorted by particle index.
    #[error("{} particle(s) failed; first (particle {}): {}", failures.len(), failures[0].0, failures[0].1)]
    Particles { failures: Vec<(usize, Error)> },

    #[error("observation covariance is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("degenerate observation: every likelihood is below the underflow floor")]
    DegenerateObservation,

    #[error("kernel density has no positive-weight component")]
    EmptyDensity,

    #[error("bandwidth of component {component} is {value:e}, below floor {floor:e}")]
    BandwidthBelowFloor {
        component: usize,
        value: f64,
        floor: f64,
    },

    #[error("SGD diverged at step {step}: non-finite parameters (lower the learning rate)")]
    DivergentLearning { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown model {0:?}")]
    UnknownModel(String),

    #[error("step k={k}: {source}")]
    AtStep {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Collects per-particle results, failing with every error and its index.
    pub(crate) fn collect_particles<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
        let mut ok = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => ok.push(v),
                Err(e) => failures.push((i, e)),
            }
        }
        if failures.is_empty() {
            Ok(ok)
        } else {
            Err(Error::Particles { failures })
        }
    }

    pub(crate) fn at_step(self, k: usize) -> Self {
        Error::AtStep {
            k,
            source: Box::new(self),
        }
    }

    /// Strips step and particle annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            Error::Particles { failures } => failures[0].1.root(),
            other => other,
        }
    }
}
