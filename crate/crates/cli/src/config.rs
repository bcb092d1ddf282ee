//! The run configuration read from TOML. Every section and key is optional;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use dosesim::data::PreprocessConfig;
use dosesim::diagnostics::Normalization;
use dosesim::env::EnvConfig;
use dosesim::models::ModelKind;
use dosesim::plant::GenerateConfig;
use dosesim::training::{HyperParams, SearchSpace, TpeConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; the `--out` flag wins over it.
    pub out: Option<PathBuf>,
    pub plant: PlantSection,
    pub preprocess: PreprocessConfig,
    pub tune: TuneSection,
    pub train: TrainSection,
    pub env: EnvConfig,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: None,
            plant: PlantSection::default(),
            preprocess: PreprocessConfig::default(),
            tune: TuneSection::default(),
            train: TrainSection::default(),
            env: EnvConfig::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sensors {
    /// Noise, dropouts, failure bursts and drift.
    Realistic,
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub duration: usize,
    pub sensors: Sensors,
    pub auxiliary_channels: bool,
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection {
            duration: 50_000,
            sensors: Sensors::Realistic,
            auxiliary_channels: true,
        }
    }
}

impl PlantSection {
    pub fn generate_config(&self, seed: u64) -> GenerateConfig {
        let base = match self.sensors {
            Sensors::Realistic => GenerateConfig::realistic(self.duration, seed),
            Sensors::Perfect => GenerateConfig::noiseless_sensors(self.duration, seed),
        };
        GenerateConfig {
            auxiliary_channels: self.auxiliary_channels,
            ..base
        }
    }
}

/// Epoch loop settings shared by tuning trials and final training.
/// Sample caps of 0 mean "all windows".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub epochs: usize,
    pub patience: usize,
    pub max_train_samples: usize,
    pub max_val_samples: usize,
}

impl Schedule {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let cap = |n: usize| (n > 0).then_some(n);
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            max_train_samples: cap(self.max_train_samples),
            max_val_samples: cap(self.max_val_samples),
            seed,
        }
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 4,
            patience: 5,
            max_train_samples: 8000,
            max_val_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacePreset {
    /// Narrow ranges sized for a laptop CPU.
    Desk,
    /// Ranges covering the published configurations.
    Full,
}

impl SpacePreset {
    pub fn space(self, kind: ModelKind) -> SearchSpace {
        match self {
            SpacePreset::Desk => SearchSpace::desk(kind),
            SpacePreset::Full => SearchSpace::full(kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub models: Vec<ModelKind>,
    pub trials: usize,
    pub space: SpacePreset,
    pub tpe: TpeConfig,
    /// Budget of each trial.
    pub schedule: Schedule,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            models: ModelKind::ALL.to_vec(),
            trials: 4,
            space: SpacePreset::Desk,
            tpe: TpeConfig {
                startup_trials: 3,
                ..TpeConfig::default()
            },
            schedule: Schedule {
                epochs: 2,
                patience: 2,
                max_train_samples: 2000,
                max_val_samples: 500,
            },
        }
    }
}

/// Where `train` takes hyper-parameters from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperSource {
    /// The tuned point when `tune` has run, the desk preset otherwise.
    Auto,
    Tuned,
    Desk,
    /// The published optimum (large models; slow on a CPU).
    Table1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub models: Vec<ModelKind>,
    pub hyper: HyperSource,
    pub schedule: Schedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            models: ModelKind::ALL.to_vec(),
            hyper: HyperSource::Auto,
            schedule: Schedule::default(),
        }
    }
}

impl TrainSection {
    pub fn preset(&self, kind: ModelKind) -> Option<HyperParams> {
        match self.hyper {
            HyperSource::Desk => Some(HyperParams::desk(kind)),
            HyperSource::Table1 => Some(HyperParams::table1(kind)),
            HyperSource::Auto | HyperSource::Tuned => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sequences {
    /// One rollout per regime of the plant's schedule.
    Regimes,
    /// `count` starts spread over the test split.
    EvenlySpaced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub sequences: Sequences,
    pub count: usize,
    pub normalization: Normalization,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            sequences: Sequences::Regimes,
            count: 10,
            normalization: Normalization::MinMax,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: dosesim::Error| CliError::Usage(format!("invalid config: {e}"));
        self.plant.generate_config(self.seed).validate().map_err(usage)?;
        self.preprocess.validate().map_err(usage)?;
        self.env.validate().map_err(usage)?;
        for (key, s) in [("tune.schedule", &self.tune.schedule), ("train.schedule", &self.train.schedule)] {
            if s.epochs == 0 {
                return Err(CliError::Usage(format!("invalid config: {key}.epochs must be at least 1")));
            }
        }
        if self.tune.trials == 0 {
            return Err(CliError::Usage("invalid config: tune.trials must be at least 1".into()));
        }
        if self.report.count == 0 {
            return Err(CliError::Usage("invalid config: report.count must be at least 1".into()));
        }
        Ok(())
    }
}
