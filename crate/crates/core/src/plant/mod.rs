//! Ground-truth dynamical system, sensors and dosing controller used to
//! produce closed-loop datasets in place of real plant logs.

mod generate;
mod model;
mod scenario;

pub use generate::{
    generate_dataset, simulate, GenerateConfig, PlantTrajectory, Simulation, AMMONIA,
    AMMONIA_NITRATE, DOSAGE, GENERATED_FEATURES, NITRATE, PH, PHOSPHATE, SETTLING_HORIZON,
    TURBIDITY,
};
pub use model::{
    dose_controller, step_plant, ControllerConfig, Disturbance, InfluentMeans, PlantParams,
    PlantState, Species, TimeConstants, EQUILIBRIUM_DOSAGE, EQUILIBRIUM_STATE,
};
pub use scenario::{
    DisturbanceProfile, FailureBurst, FailureMode, NoiseStd, ScheduledEvent, SensorArray,
    SensorModel, AMMONIA_OFFSET, BIOMASS_OFFSET, PULSE_OFFSET, REGIME_CYCLE, SENSOR_BURST_OFFSET,
    SENSOR_BURST_PERIOD, TREND_OFFSET,
};
