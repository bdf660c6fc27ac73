use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rates::RateConfig;
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::model::ObsQuadrature;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Particles of the bootstrap filter; the filter's N when absent.
    pub bootstrap_particles: Option<usize>,
    pub bootstrap: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            bootstrap_particles: None,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Monte-Carlo samples per expectation in the recurrence estimate.
    pub samples: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { samples: 100_000 }
    }
}

/// Everything one run of the command-line tool needs. The file format is TOML
/// with these field names; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    /// Drives every random stream (truth, filters, studies).
    pub seed: u64,
    pub observation_quadrature: ObsQuadrature,
    pub filter: FilterConfig,
    pub baselines: BaselineConfig,
    pub rates: RateConfig,
    pub diagnose: DiagnoseConfig,
    /// Write per-step checkpoint files.
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "linear1d".into(),
            seed: 0,
            observation_quadrature: ObsQuadrature::Right,
            filter: FilterConfig::default(),
            baselines: BaselineConfig::default(),
            rates: RateConfig::default(),
            diagnose: DiagnoseConfig::default(),
            checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        if self.baselines.bootstrap_particles == Some(0) || self.diagnose.samples == 0 {
            return Err(Error::config("bootstrap_particles and diagnose.samples must be positive"));
        }
        if let Some(g) = &self.rates.grid {
            if g.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::config("rate sweep values must be positive"));
            }
        }
        if !(self.rates.dt > 0.0 && self.rates.horizon > 0.0) {
            return Err(Error::config("rates.dt and rates.horizon must be positive"));
        }
        Ok(())
    }

    /// The filter settings with the experiment seed applied.
    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            seed: self.seed,
            ..self.filter.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "model = \"ou1d\"\nseed = 3\n[filter]\nparticles = 200\ncenters = 16\n[filter.predict]\nmc_samples = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.model, "ou1d");
        assert_eq!(cfg.filter.particles, 200);
        assert_eq!(cfg.filter.predict.mc_samples, 16);
        assert_eq!(cfg.filter.steps, FilterConfig::default().steps);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::from_toml_str("model = \"ou1d\"\n\n[filter]\nparticles = \"many\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let err = ExperimentConfig::from_toml_str("model = \"ou1d\"\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ExperimentConfig::from_toml_str("model = \n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("[filter]\nparticles = 10\ncenters = 20\n").is_err());
    }


    mod props {
        use super::*;
        use proptest::prelude::{prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn random_configs_round_trip(
                seed: u64, n in 2usize..5000, l_frac in 0.01f64..1.0, m in 1usize..512, dt in 1e-3f64..1.0,
                left: bool, samples in 1usize..1_000_000,
            ) {
                let mut cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
                cfg.filter.particles = n;
                cfg.filter.centers = ((n as f64 * l_frac) as usize).clamp(1, n);
                cfg.filter.predict.mc_samples = m;
                cfg.filter.dt = dt;
                if left {
                    cfg.filter.predict.variant = crate::predict::PredictVariant::LeftPoint;
                }
                cfg.diagnose.samples = samples;
                prop_assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
            }
        }
    }
}
