use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{
    dose_controller, step_plant, ControllerConfig, Disturbance, PlantParams, PlantState,
    EQUILIBRIUM_STATE,
};
use super::scenario::{DisturbanceProfile, SensorArray, SensorModel};
use crate::data::dataset::{TimeSeriesDataset, META_INTERVAL, META_SOURCE};
use crate::error::{Error, Result};

pub const PHOSPHATE: &str = "phosphate";
pub const NITRATE: &str = "nitrate";
pub const AMMONIA: &str = "ammonia";
pub const AMMONIA_NITRATE: &str = "ammonia_nitrate";
pub const DOSAGE: &str = "dosage";
pub const PH: &str = "ph";
pub const TURBIDITY: &str = "turbidity";

/// Column order of generated datasets.
pub const GENERATED_FEATURES: [&str; 7] = [
    PHOSPHATE,
    NITRATE,
    AMMONIA,
    AMMONIA_NITRATE,
    DOSAGE,
    PH,
    TURBIDITY,
];

/// Everything needed to run one closed-loop simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub params: PlantParams,
    pub controller: ControllerConfig,
    pub disturbances: DisturbanceProfile,
    pub sensors: SensorModel,
    pub duration: usize,
    pub seed: u64,
    pub start_time: DateTime<Utc>,
    pub initial_state: PlantState,
    /// Include the uncorrelated `ph` and `turbidity` channels.
    pub auxiliary_channels: bool,
}

impl GenerateConfig {
    /// Default plant with the repeating regime schedule and realistic sensors.
    pub fn realistic(duration: usize, seed: u64) -> Self {
        GenerateConfig {
            params: PlantParams::default(),
            controller: ControllerConfig::default(),
            disturbances: DisturbanceProfile::regimes(duration),
            sensors: SensorModel::realistic(duration),
            duration,
            seed,
            start_time: Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap(),
            initial_state: EQUILIBRIUM_STATE,
            auxiliary_channels: true,
        }
    }

    /// Regime schedule with process noise, but perfect sensors.
    pub fn noiseless_sensors(duration: usize, seed: u64) -> Self {
        GenerateConfig {
            sensors: SensorModel::perfect(),
            ..Self::realistic(duration, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration < 1 {
            return Err(Error::config("duration must be >= 1 step"));
        }
        self.params.validate()?;
        self.disturbances.validate()?;
        self.sensors.validate()?;
        if !self.initial_state.is_admissible() {
            return Err(Error::config("initial state violates plant invariants"));
        }
        if !self.controller.gain.is_finite() || !self.controller.setpoint.is_finite() {
            return Err(Error::config("controller gain and setpoint must be finite"));
        }
        Ok(())
    }
}

/// Ground truth behind a generated dataset: `states[k]` is the plant state
/// observed in row `k`, `dosages[k]` the dosage applied during step `k`, and
/// `disturbances[k]` the influent deviation during step `k`, so that
/// `states[k + 1] = step_plant(states[k], dosages[k], disturbances[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantTrajectory {
    pub params: PlantParams,
    pub controller: ControllerConfig,
    pub states: Vec<PlantState>,
    pub dosages: Vec<f64>,
    pub disturbances: Vec<Disturbance>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: TimeSeriesDataset,
    pub trajectory: PlantTrajectory,
}

fn mix_seed(a: u64, b: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.rotate_left(17))
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the closed loop (plant, sensors, dosing controller) and records one
/// row per step. The controller acts on the latest good-quality phosphate
/// reading.
pub fn simulate(cfg: &GenerateConfig) -> Result<Simulation> {
    cfg.validate()?;
    let params = cfg.params;
    let n = cfg.duration;
    let disturbances =
        cfg.disturbances
            .sequence(&params, n, mix_seed(cfg.seed, cfg.disturbances.seed, 1));
    let mut sensors =
        SensorArray::new(cfg.sensors.clone(), mix_seed(cfg.seed, cfg.sensors.seed, 2))?;
    let mut aux_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0, 3));

    let features: Vec<String> = GENERATED_FEATURES
        .iter()
        .take(if cfg.auxiliary_channels { 7 } else { 5 })
        .map(|s| s.to_string())
        .collect();
    let m = features.len();
    let mut values = Array2::<f64>::zeros((n, m));
    let mut quality = Array2::<u8>::zeros((n, m));

    let bounds = (params.dosage_min, params.dosage_max);
    let mut state = cfg.initial_state;
    let mut last_good_phosphate = state.phosphate;
    let (mut ph, mut turbidity) = (0.0f64, 0.0f64);
    let mut states = Vec::with_capacity(n);
    let mut dosages = Vec::with_capacity(n);

    for k in 0..n {
        let readings = sensors.measure(&state, k);
        for (j, (v, q)) in readings.iter().enumerate() {
            values[[k, j]] = *v;
            quality[[k, j]] = *q;
        }
        let (p_meas, p_q) = readings[0];
        if p_q == 0 && p_meas.is_finite() {
            last_good_phosphate = p_meas;
        }
        let u = dose_controller(
            last_good_phosphate,
            cfg.controller.setpoint,
            cfg.controller.gain,
            bounds,
        )?;
        values[[k, 4]] = u;
        if cfg.auxiliary_channels {
            let z1: f64 = StandardNormal.sample(&mut aux_rng);
            let z2: f64 = StandardNormal.sample(&mut aux_rng);
            ph = 0.995 * ph + 0.005 * z1;
            turbidity = 0.99 * turbidity + 0.05 * z2;
            let (v, q) = sensors.read(5, 7.1 + ph, 0.0, k);
            values[[k, 5]] = v;
            quality[[k, 5]] = q;
            let (v, q) = sensors.read(6, (3.0 + turbidity).max(0.0), 0.0, k);
            values[[k, 6]] = v;
            quality[[k, 6]] = q;
        }
        states.push(state);
        dosages.push(u);
        state = step_plant(&state, u, &disturbances[k], &params)?;
    }

    let interval = Duration::milliseconds((params.sampling_interval_min * 60_000.0).round() as i64);
    let mut dataset =
        TimeSeriesDataset::from_grid(cfg.start_time, interval, features, values, quality)?;
    dataset
        .metadata
        .insert(META_SOURCE.into(), "synthetic-plant".into());
    dataset
        .metadata
        .insert(META_INTERVAL.into(), interval.num_seconds().to_string());
    dataset.metadata.insert("seed".into(), cfg.seed.to_string());

    Ok(Simulation {
        dataset,
        trajectory: PlantTrajectory {
            params,
            controller: cfg.controller,
            states,
            dosages,
            disturbances,
        },
    })
}

/// Steps after which the default closed loop, started from phosphate 3 mg/L
/// without disturbances, stays within ±10% of the setpoint.
pub const SETTLING_HORIZON: usize = 60;

/// Closed-loop dataset with one (value, quality) column pair per feature.
pub fn generate_dataset(cfg: &GenerateConfig) -> Result<TimeSeriesDataset> {
    Ok(simulate(cfg)?.dataset)
}
