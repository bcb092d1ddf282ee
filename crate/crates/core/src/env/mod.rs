//! Step/reset simulation environment over a rolling window of plant rows,
//! advanced by a forecaster (or the plant itself) instead of the plant.

mod dynamics;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{ScalerStats, TimeSeriesDataset};
use crate::error::{Error, Result};

pub use dynamics::{Dynamics, LearnedDynamics, PlantOracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Weight on squared phosphate overshoot above the setpoint.
    pub phosphate: f64,
    /// Weight on dosage (chemical cost per unit).
    pub dosage: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            phosphate: 1.0,
            dosage: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub action_column: String,
    pub objective_column: String,
    /// Index of the first predicted row; the initial window is `[p − l, p)`.
    pub start: usize,
    pub episode_length: usize,
    /// Model steps per environment step; the action is held across them.
    pub stride: usize,
    pub gamma: f64,
    pub weights: RewardWeights,
    /// Phosphate setpoint in mg/L.
    pub setpoint: f64,
    /// Largest admissible |standardized value| before the episode ends.
    pub divergence_guard: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            action_column: "dosage".into(),
            objective_column: "phosphate".into(),
            start: 240,
            episode_length: 300,
            stride: 1,
            gamma: 0.99,
            weights: RewardWeights::default(),
            setpoint: 1.0,
            divergence_guard: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.action_column == self.objective_column {
            return Err(Error::config("action and objective columns must differ"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.weights.phosphate < 0.0 || self.weights.dosage < 0.0 {
            return Err(Error::config("reward weights must be non-negative"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::config("divergence_guard must be positive"));
        }
        Ok(())
    }
}

/// `−(w_p · max(0, phosphate − y_d)² + w_u · a)`, never positive for
/// non-negative actions.
pub fn reward(phosphate: f64, action: f64, setpoint: f64, weights: &RewardWeights) -> f64 {
    let over = (phosphate - setpoint).max(0.0);
    -(weights.phosphate * over * over + weights.dosage * action)
}

/// Discounted return from the first reward: `Σ γ^i r_i`, summed front to
/// back with the discount built up by repeated multiplication.
pub fn cumulative_reward(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Sum over features of squared standardized differences.
pub fn squared_error(scaler: &ScalerStats, pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> f64 {
    pred.iter()
        .zip(truth.iter())
        .enumerate()
        .map(|(j, (p, t))| {
            let d = scaler.apply_value(j, *p) - scaler.apply_value(j, *t);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Steps taken so far, this one included.
    pub step: usize,
    pub total_reward: f64,
    /// Action entry of the newest input row the model saw.
    pub input_action: f64,
    /// How many of the window's rows are predictions.
    pub predicted_rows: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Predicted row in raw units, as produced by the dynamics.
    pub state: Array1<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub struct Environment<D: Dynamics> {
    dynamics: D,
    data: TimeSeriesDataset,
    cfg: EnvConfig,
    action_col: usize,
    objective_col: usize,
    window: Array2<f64>,
    /// Dataset index of the row the next model step predicts.
    next_row: usize,
    steps: usize,
    predicted: usize,
    total_reward: f64,
    done: bool,
    started: bool,
}

impl<D: Dynamics> Environment<D> {
    pub fn new(dynamics: D, data: TimeSeriesDataset, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if data.features() != dynamics.features() {
            return Err(Error::Schema(format!(
                "model expects features {:?}, dataset has {:?}",
                dynamics.features(),
                data.features()
            )));
        }
        let action_col = data.require_feature(&cfg.action_column)?;
        let objective_col = data.require_feature(&cfg.objective_column)?;
        let l = dynamics.window();
        Ok(Environment {
            dynamics,
            data,
            cfg,
            action_col,
            objective_col,
            window: Array2::zeros((l, 0)),
            next_row: 0,
            steps: 0,
            predicted: 0,
            total_reward: 0.0,
            done: false,
            started: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Moves the episode start; takes effect at the next reset.
    pub fn set_start(&mut self, start: usize) {
        self.cfg.start = start;
        self.started = false;
    }

    pub fn dynamics(&self) -> &D {
        &self.dynamics
    }

    pub fn dataset(&self) -> &TimeSeriesDataset {
        &self.data
    }

    pub fn action_column(&self) -> usize {
        self.action_col
    }

    pub fn objective_column(&self) -> usize {
        self.objective_col
    }

    /// The current `l × n` model input in raw units.
    pub fn window(&self) -> &Array2<f64> {
        &self.window
    }

    /// Loads rows `[p − l, p)` and clears the counters. The initial action
    /// is whatever the last of those rows recorded.
    pub fn reset(&mut self) -> Result<Array2<f64>> {
        let l = self.dynamics.window();
        let p = self.cfg.start;
        if p < l {
            return Err(Error::config(format!(
                "start index {p} leaves no room for a window of {l} rows (minimum {l})"
            )));
        }
        if p > self.data.len() {
            return Err(Error::config(format!(
                "start index {p} beyond the {} dataset rows",
                self.data.len()
            )));
        }
        // the window must not straddle a gap in the record
        let gap = self.data.timestamps()[p - l..p]
            .windows(2)
            .any(|w| w[1] - w[0] != self.data.interval());
        if gap {
            return Err(Error::Dataset(format!("rows {}..{p} contain a time gap", p - l)));
        }
        self.dynamics.reset(p)?;
        self.window = self.data.values().slice(s![p - l..p, ..]).to_owned();
        self.next_row = p;
        self.steps = 0;
        self.predicted = 0;
        self.total_reward = 0.0;
        self.done = self.cfg.episode_length == 0;
        self.started = true;
        Ok(self.window.clone())
    }

    /// Writes `action` into the newest row, advances `stride` model steps
    /// with the action held, and scores the last predicted row.
    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        if !self.started {
            return Err(Error::Env("step called before reset".into()));
        }
        if self.done {
            return Err(Error::Env("episode is over; call reset".into()));
        }
        if !action.is_finite() {
            return Err(Error::NonFinite {
                context: "action".into(),
            });
        }
        let l = self.window.nrows();
        let mut state = Array1::zeros(self.window.ncols());
        let mut diverged = false;
        for _ in 0..self.cfg.stride {
            self.window[[l - 1, self.action_col]] = action;
            state = self.dynamics.predict(self.window.view(), self.next_row)?;
            let scaler = self.dynamics.scaler();
            diverged = state
                .iter()
                .enumerate()
                .any(|(j, v)| !v.is_finite() || scaler.apply_value(j, *v).abs() > self.cfg.divergence_guard);
            // roll the window by one row
            for i in 1..l {
                let (mut dst, src) = self.window.multi_slice_mut((s![i - 1, ..], s![i, ..]));
                dst.assign(&src);
            }
            self.window.row_mut(l - 1).assign(&state);
            self.next_row += 1;
            self.predicted = (self.predicted + 1).min(l);
            if diverged {
                break;
            }
        }
        let r = reward(state[self.objective_col], action, self.cfg.setpoint, &self.cfg.weights);
        self.steps += 1;
        self.total_reward += r;
        self.done = diverged || self.steps >= self.cfg.episode_length;
        Ok(StepResult {
            state,
            reward: r,
            done: self.done,
            info: StepInfo {
                step: self.steps,
                total_reward: self.total_reward,
                input_action: action,
                predicted_rows: self.predicted,
                diverged,
            },
        })
    }

    /// Dataset index of the row the last step predicted.
    pub fn last_row(&self) -> Option<usize> {
        (self.steps > 0).then(|| self.next_row - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    /// Dataset index of the predicted row.
    pub row: usize,
    pub action: f64,
    pub predicted_objective: f64,
    pub true_objective: Option<f64>,
    pub predicted: Array1<f64>,
    pub reward: f64,
    pub step_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutTrace {
    pub start: usize,
    pub records: Vec<TraceRecord>,
    /// The episode ended on the divergence guard.
    pub diverged: bool,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    /// Predicted rows stacked, one per step.
    pub fn predicted_matrix(&self) -> Array2<f64> {
        let n = self.records.first().map_or(0, |r| r.predicted.len());
        let mut out = Array2::zeros((self.records.len(), n));
        for (i, r) in self.records.iter().enumerate() {
            out.row_mut(i).assign(&r.predicted);
        }
        out
    }

    /// `t,action,pred_obj,true_obj,reward,step_mse`; missing truth is empty.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,action,pred_obj,true_obj,reward,step_mse\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t,
                r.action,
                r.predicted_objective,
                opt(r.true_objective),
                r.reward,
                opt(r.step_mse)
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads back [`RolloutTrace::to_csv_string`]. The file carries only the
    /// objective, so `predicted` is empty and `row` is `start + t`.
    pub fn from_csv_str(text: &str, start: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            t: usize,
            action: f64,
            pred_obj: f64,
            true_obj: Option<f64>,
            reward: f64,
            step_mse: Option<f64>,
        }
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header != ["t", "action", "pred_obj", "true_obj", "reward", "step_mse"] {
            return Err(Error::Schema(format!("unexpected trace header {header:?}")));
        }
        let mut trace = RolloutTrace {
            start,
            ..RolloutTrace::default()
        };
        for line in reader.deserialize() {
            let l: Line = line?;
            trace.records.push(TraceRecord {
                t: l.t,
                row: start + l.t,
                action: l.action,
                predicted_objective: l.pred_obj,
                true_objective: l.true_obj,
                predicted: Array1::zeros(0),
                reward: l.reward,
                step_mse: l.step_mse,
            });
        }
        Ok(trace)
    }
}

/// Replays the recorded actions through the environment: each step feeds
/// the action logged at the newest input row, starting with the one
/// already in the initial window. Stops early only on divergence.
pub fn replay_rollout<D: Dynamics>(env: &mut Environment<D>) -> Result<RolloutTrace> {
    let cfg = env.config().clone();
    let needed = cfg.start + cfg.episode_length * cfg.stride;
    if needed > env.dataset().len() {
        return Err(Error::TooShort {
            what: "dataset for replay".into(),
            required: needed,
            actual: env.dataset().len(),
        });
    }
    env.reset()?;
    let (ia, io) = (env.action_column(), env.objective_column());
    let mut trace = RolloutTrace {
        start: cfg.start,
        ..RolloutTrace::default()
    };
    for t in 0..cfg.episode_length {
        let action = env.dataset().values()[[cfg.start + t * cfg.stride - 1, ia]];
        let res = env.step(action)?;
        let row = env.last_row().expect("a step was taken");
        let truth = env.dataset().values().row(row);
        let mse = squared_error(env.dynamics().scaler(), res.state.view(), truth);
        trace.records.push(TraceRecord {
            t,
            row,
            action,
            predicted_objective: res.state[io],
            true_objective: Some(truth[io]),
            predicted: res.state,
            reward: res.reward,
            step_mse: Some(mse),
        });
        if res.info.diverged {
            trace.diverged = true;
            break;
        }
    }
    Ok(trace)
}
