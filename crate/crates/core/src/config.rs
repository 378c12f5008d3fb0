//! Experiment configuration file (TOML).
//!
//! ```toml
//! [scenario]
//! enb = [0.0, 0.0]
//! sniffers = [[-41.3, -100.4], [122.8, -98.4]]
//! ue_truth = [0.0, 114.7]
//! ta_index = 1
//!
//! [clock]
//! sniffer_offsets = [3.0e-6, -1.5e-6]   # default: zeros
//! ue_hw_error = 2.2e-7                  # default: 0
//! sigma0 = 1.2e-7                       # noise sigma = sigma0 * 10^(-snr/20)
//! # sniffer_noise_sigma = 1.0e-8        # or a fixed sigma instead of sigma0
//! # ta_value = 5.2e-7                   # default: ta_index * 16 Ts
//!
//! [[relocation]]
//! sniffer = 1
//! at_subframe = 10000
//! position = [0.0, 220.0]
//!
//! [experiment]
//! scheme = "tdoa"          # or "toa"
//! subframes = 20000
//! rnti = 7423
//! seed = 7
//! snr_db = 20.0
//! metric = "position"      # or "range"
//! ```

use crate::geometry::{Position, Scenario, ScenarioError, ScenarioSpec};
use crate::timing::{sigma_for_snr, ClockConfig, Relocation, RelocationPlan, TimingError};
use serde::Deserialize;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("invalid clock or relocation settings: {0}")]
    Timing(#[from] TimingError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Toa,
    Tdoa,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Toa => "toa",
            Scheme::Tdoa => "tdoa",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toa" => Ok(Scheme::Toa),
            "tdoa" => Ok(Scheme::Tdoa),
            other => Err(format!("unknown scheme '{other}' (expected toa or tdoa)")),
        }
    }
}

/// How a position estimate is scored against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMetric {
    /// Euclidean distance between estimate and true UE position.
    Position,
    /// Difference of the estimated and true UE-eNb ranges.
    Range,
}

impl fmt::Display for ErrorMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMetric::Position => "position",
            ErrorMetric::Range => "range",
        })
    }
}

impl FromStr for ErrorMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "position" => Ok(ErrorMetric::Position),
            "range" => Ok(ErrorMetric::Range),
            other => Err(format!(
                "unknown metric '{other}' (expected position or range)"
            )),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClockSection {
    sniffer_offsets: Option<Vec<f64>>,
    #[serde(default)]
    ue_hw_error: f64,
    sniffer_noise_sigma: Option<f64>,
    sigma0: Option<f64>,
    ta_value: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    scheme: Scheme,
    #[serde(default = "default_subframes")]
    subframes: u64,
    #[serde(default = "default_rnti")]
    rnti: u16,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_snr")]
    snr_db: f64,
    #[serde(default = "default_metric")]
    metric: ErrorMetric,
}

fn default_subframes() -> u64 {
    20_000
}
fn default_rnti() -> u16 {
    7423
}
fn default_snr() -> f64 {
    20.0
}
fn default_metric() -> ErrorMetric {
    ErrorMetric::Position
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: ScenarioSpec,
    clock: Option<ClockSection>,
    #[serde(default)]
    relocation: Vec<Relocation>,
    experiment: ExperimentSection,
}

/// Sniffer noise setting: a fixed sigma, or a reference sigma scaled by SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Fixed(f64),
    SnrScaled { sigma0: f64 },
}

impl NoiseModel {
    pub fn sigma(&self, snr_db: f64) -> f64 {
        match *self {
            NoiseModel::Fixed(s) => s,
            NoiseModel::SnrScaled { sigma0 } => sigma_for_snr(sigma0, snr_db),
        }
    }
}

/// A validated experiment: scenario, clocks, relocation plan and run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub sniffer_offsets: Vec<f64>,
    pub ue_hw_error: f64,
    pub ta_value: f64,
    pub noise: NoiseModel,
    pub relocations: RelocationPlan,
    pub scheme: Scheme,
    pub subframes: u64,
    pub rnti: u16,
    pub seed: u64,
    pub snr_db: f64,
    pub metric: ErrorMetric,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        let scenario = Scenario::try_from(file.scenario)?;
        let n = scenario.sniffers().len();
        let clock = file.clock.unwrap_or(ClockSection {
            sniffer_offsets: None,
            ue_hw_error: 0.0,
            sniffer_noise_sigma: None,
            sigma0: None,
            ta_value: None,
        });
        let noise = match (clock.sniffer_noise_sigma, clock.sigma0) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "set either clock.sniffer_noise_sigma or clock.sigma0, not both".into(),
                ))
            }
            (Some(s), None) => NoiseModel::Fixed(s),
            (None, Some(sigma0)) => NoiseModel::SnrScaled { sigma0 },
            (None, None) => NoiseModel::Fixed(0.0),
        };
        let ta_value = clock.ta_value.unwrap_or_else(|| scenario.ta_seconds());
        let cfg = Self {
            sniffer_offsets: clock.sniffer_offsets.unwrap_or_else(|| vec![0.0; n]),
            ue_hw_error: clock.ue_hw_error,
            ta_value,
            noise,
            relocations: RelocationPlan::new(file.relocation),
            scheme: file.experiment.scheme,
            subframes: file.experiment.subframes,
            rnti: file.experiment.rnti,
            seed: file.experiment.seed,
            snr_db: file.experiment.snr_db,
            metric: file.experiment.metric,
            scenario,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Checks every cross-field requirement; call again after overriding fields.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.scenario.sniffers().len();
        self.clock().validate(n)?;
        self.relocations.validate(n, self.subframes)?;
        if self.subframes == 0 {
            return Err(ConfigError::Invalid(
                "experiment.subframes must be at least 1".into(),
            ));
        }
        if !self.snr_db.is_finite() {
            return Err(ConfigError::Invalid(
                "experiment.snr_db must be finite".into(),
            ));
        }
        if self.relocations.moves.iter().any(|m| m.sniffer == 0) {
            return Err(ConfigError::Invalid(
                "sniffer 0 is the TDoA reference and cannot be relocated".into(),
            ));
        }
        if self.scheme == Scheme::Tdoa && self.relocations.moves.is_empty() && n < 3 {
            return Err(ConfigError::Invalid(
                "tdoa needs a [[relocation]] entry or at least 3 sniffers".into(),
            ));
        }
        Ok(())
    }

    /// Clock settings for the configured seed and SNR.
    pub fn clock(&self) -> ClockConfig {
        ClockConfig {
            sniffer_offsets: self.sniffer_offsets.clone(),
            ue_hw_error: self.ue_hw_error,
            sniffer_noise_sigma: self.noise.sigma(self.snr_db),
            ta_value: self.ta_value,
            rng_seed: self.seed,
        }
    }

    /// Sniffer positions for each capture configuration.
    pub fn configurations(&self) -> Vec<crate::timing::Configuration> {
        self.relocations
            .configurations(self.scenario.sniffers(), self.subframes)
    }

    pub fn reference_sniffer(&self) -> Position {
        self.scenario.sniffers()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        [scenario]
        enb = [0.0, 0.0]
        sniffers = [[100.0, 0.0], [0.0, 100.0]]
        ue_truth = [40.0, 30.0]
        ta_index = 0

        [clock]
        sigma0 = 1.0e-7

        [[relocation]]
        sniffer = 1
        at_subframe = 50
        position = [100.0, 100.0]

        [experiment]
        scheme = "tdoa"
        subframes = 100
        seed = 3
    "#;

    #[test]
    fn loads_with_defaults() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.sniffer_offsets, vec![0.0, 0.0]);
        assert_eq!(cfg.rnti, 7423);
        assert_eq!(cfg.metric, ErrorMetric::Position);
        assert_eq!(cfg.configurations().len(), 2);
        let clock = cfg.clock();
        assert!((clock.sniffer_noise_sigma - 1e-8).abs() < 1e-20);
        assert_eq!(clock.rng_seed, 3);
    }

    #[test]
    fn tdoa_requires_relocation_or_three_sniffers() {
        let text = BASE.replace("[[relocation]]\n        sniffer = 1\n        at_subframe = 50\n        position = [100.0, 100.0]", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("relocation"), "{err}");
        let toa = text.replace("\"tdoa\"", "\"toa\"");
        assert!(ExperimentConfig::from_toml(&toa).is_ok());
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(matches!(
            ExperimentConfig::from_toml(&BASE.replace("at_subframe = 50", "at_subframe = 500")),
            Err(ConfigError::Timing(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml(&BASE.replace("sigma0", "sigma_zero")),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml(&BASE.replace("ta_index = 0", "ta_index = 2")),
            Err(ConfigError::Scenario(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml(&BASE.replace(
                "sigma0 = 1.0e-7",
                "sigma0 = 1.0e-7\nsniffer_noise_sigma = 1.0"
            )),
            Err(ConfigError::Invalid(_))
        ));
    }
}
