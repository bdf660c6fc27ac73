//! Experiment runner: truth simulation, baselines, convergence-rate studies
//! and the recurrence-coefficient diagnostic.

pub mod config;
pub mod experiment;
pub mod oracle;
pub mod rates;
pub mod recurrence;
pub mod slope;

pub use config::ExperimentConfig;
pub use experiment::{run_diagnose, run_experiment, run_rates, simulate, write_truth, ExperimentSummary};
pub use rates::{run_rate_study, Axis, ConvergenceReport, RateConfig};
pub use recurrence::{estimate_recurrence_coefficient, RecurrenceEstimate};
pub use slope::{fit_loglog_slope, SlopeFit};
