use ndarray::{Array1, ArrayView2};

use crate::data::{ScalerStats, TimeEncoding, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::models::Forecaster;
use crate::plant::{
    dose_controller, step_plant, PlantState, PlantTrajectory, AMMONIA, AMMONIA_NITRATE, DOSAGE,
    NITRATE, PHOSPHATE,
};
use crate::training::Checkpoint;

/// Next-row transition used by the environment. Windows and rows are in
/// raw units.
pub trait Dynamics {
    fn features(&self) -> &[String];
    fn window(&self) -> usize;
    /// Standardization used for the divergence guard and error curves.
    fn scaler(&self) -> &ScalerStats;
    /// Called before the first prediction of an episode whose first
    /// predicted row has dataset index `p`.
    fn reset(&mut self, _p: usize) -> Result<()> {
        Ok(())
    }
    /// The row following `window`, which is dataset row `row`.
    fn predict(&mut self, window: ArrayView2<f64>, row: usize) -> Result<Array1<f64>>;
}

/// A trained forecaster wrapped with its scaler.
#[derive(Debug, Clone)]
pub struct LearnedDynamics {
    checkpoint: Checkpoint,
    model: Forecaster,
}

impl LearnedDynamics {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let model = checkpoint.model()?;
        Ok(LearnedDynamics { checkpoint, model })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }
}

impl Dynamics for LearnedDynamics {
    fn features(&self) -> &[String] {
        self.checkpoint.features()
    }

    fn window(&self) -> usize {
        self.checkpoint.window
    }

    fn scaler(&self) -> &ScalerStats {
        &self.checkpoint.scaler
    }

    fn predict(&mut self, window: ArrayView2<f64>, _row: usize) -> Result<Array1<f64>> {
        self.checkpoint.predict_raw(&self.model, window)
    }
}

#[derive(Debug, Clone, Copy)]
enum Column {
    Phosphate,
    Nitrate,
    Ammonia,
    AmmoniaNitrate,
    Dosage,
    Sin(TimeEncoding),
    Cos(TimeEncoding),
    /// Not produced by the plant; the recorded value is passed through.
    Recorded(usize),
}

/// The synthetic plant's own transition, driven by the recorded
/// disturbances. With noiseless sensors its predictions are exact.
///
/// Hidden state (biomass activity) is taken from the simulation at reset
/// and then advanced with the actions found in the window.
#[derive(Debug, Clone)]
pub struct PlantOracle {
    trajectory: PlantTrajectory,
    data: TimeSeriesDataset,
    scaler: ScalerStats,
    window: usize,
    columns: Vec<Column>,
    dosage_col: usize,
    /// Trajectory step of each dataset row.
    steps: Vec<usize>,
    state: Option<(usize, PlantState)>,
}

impl PlantOracle {
    /// `data` is the processed dataset the environment replays; its rows
    /// are matched to simulation steps through their timestamps, which
    /// start at `start`.
    pub fn new(
        trajectory: PlantTrajectory,
        start: chrono::DateTime<chrono::Utc>,
        data: TimeSeriesDataset,
        scaler: ScalerStats,
        window: usize,
    ) -> Result<Self> {
        if scaler.features != data.features() {
            return Err(Error::Schema("oracle scaler and dataset disagree on features".into()));
        }
        let mut columns = Vec::with_capacity(data.n_features());
        for (j, f) in data.features().iter().enumerate() {
            let c = match f.as_str() {
                PHOSPHATE => Column::Phosphate,
                NITRATE => Column::Nitrate,
                AMMONIA => Column::Ammonia,
                AMMONIA_NITRATE => Column::AmmoniaNitrate,
                DOSAGE => Column::Dosage,
                other => TimeEncoding::ALL
                    .iter()
                    .find_map(|e| {
                        let [s, c] = e.column_names();
                        if other == s {
                            Some(Column::Sin(*e))
                        } else if other == c {
                            Some(Column::Cos(*e))
                        } else {
                            None
                        }
                    })
                    .unwrap_or(Column::Recorded(j)),
            };
            columns.push(c);
        }
        let dosage_col = data.require_feature(DOSAGE)?;
        let interval = data.interval();
        let steps = data
            .timestamps()
            .iter()
            .map(|t| {
                let d = *t - start;
                if d < chrono::Duration::zero() || d.num_milliseconds() % interval.num_milliseconds() != 0 {
                    return Err(Error::Schema(format!("row at {t} is not on the simulation grid")));
                }
                let k = (d.num_milliseconds() / interval.num_milliseconds()) as usize;
                if k >= trajectory.states.len() {
                    return Err(Error::Schema(format!("row at {t} lies beyond the simulation")));
                }
                Ok(k)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PlantOracle {
            trajectory,
            data,
            scaler,
            window,
            columns,
            dosage_col,
            steps,
            state: None,
        })
    }

    fn measure(&self, state: &PlantState, row: usize) -> Result<Array1<f64>> {
        let ctl = self.trajectory.controller;
        let p = &self.trajectory.params;
        let ts = self.data.timestamps()[row];
        self.columns
            .iter()
            .map(|c| {
                Ok(match c {
                    Column::Phosphate => state.phosphate,
                    Column::Nitrate => state.nitrate,
                    Column::Ammonia => state.ammonia,
                    Column::AmmoniaNitrate => state.ammonia + state.nitrate,
                    Column::Dosage => dose_controller(
                        state.phosphate,
                        ctl.setpoint,
                        ctl.gain,
                        (p.dosage_min, p.dosage_max),
                    )?,
                    Column::Sin(e) => e.encode(&ts)[0],
                    Column::Cos(e) => e.encode(&ts)[1],
                    Column::Recorded(j) => self.data.values()[[row, *j]],
                })
            })
            .collect()
    }
}

impl Dynamics for PlantOracle {
    fn features(&self) -> &[String] {
        self.data.features()
    }

    fn window(&self) -> usize {
        self.window
    }

    fn scaler(&self) -> &ScalerStats {
        &self.scaler
    }

    fn reset(&mut self, p: usize) -> Result<()> {
        if p == 0 || p > self.steps.len() {
            return Err(Error::config(format!("oracle start {p} outside the dataset")));
        }
        let k = self.steps[p - 1];
        self.state = Some((p - 1, self.trajectory.states[k]));
        Ok(())
    }

    fn predict(&mut self, window: ArrayView2<f64>, row: usize) -> Result<Array1<f64>> {
        let (prev, state) = self
            .state
            .ok_or_else(|| Error::Env("oracle used before reset".into()))?;
        if row != prev + 1 || row >= self.steps.len() {
            return Err(Error::Env(format!("oracle expected row {}, got {row}", prev + 1)));
        }
        let (k0, k1) = (self.steps[prev], self.steps[row]);
        if k1 != k0 + 1 {
            return Err(Error::Dataset(format!("rows {prev} and {row} are not consecutive steps")));
        }
        let action = window[[window.nrows() - 1, self.dosage_col]];
        let next = step_plant(&state, action, &self.trajectory.disturbances[k0], &self.trajectory.params)?;
        self.state = Some((row, next));
        self.measure(&next, row)
    }
}
