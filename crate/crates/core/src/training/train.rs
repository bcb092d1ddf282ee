use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hyper::HyperParams;
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::models::{Forecaster, ModelKind, ModelSpec};
use crate::nn::{Adam, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// Windows drawn (without replacement) per epoch; all when `None`.
    pub max_train_samples: Option<usize>,
    /// Validation windows, evenly strided over the split; all when `None`.
    pub max_val_samples: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            patience: 10,
            max_train_samples: None,
            max_val_samples: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub wall_time_s: f64,
    pub seed: u64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// `epoch,train_mse,val_mse`
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_mse, e.val_mse);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// One training run seen by the epoch loop.
pub(crate) trait EpochDriver {
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn validate(&mut self, epoch: usize) -> Result<f64>;
    /// Called whenever the last validation loss is a new minimum.
    fn keep_best(&mut self, epoch: usize);
}

pub(crate) struct EpochOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

/// Keeps the state with the lowest validation loss (the first one on ties)
/// and stops after `patience` epochs without improvement.
pub(crate) fn run_epochs(driver: &mut impl EpochDriver, epochs: usize, patience: usize) -> Result<EpochOutcome> {
    if epochs == 0 {
        return Err(Error::config("at least one epoch is required"));
    }
    let mut records = Vec::with_capacity(epochs);
    let mut best = (0, f64::INFINITY);
    let mut last_finite: Option<f64> = None;
    let mut stopped_early = false;
    for epoch in 1..=epochs {
        let train_mse = driver.train_epoch(epoch)?;
        let val_mse = driver.validate(epoch)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_finite_loss: last_finite,
            });
        }
        last_finite = Some(train_mse);
        records.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best.1 {
            best = (epoch, val_mse);
            driver.keep_best(epoch);
        } else if epoch - best.0 >= patience {
            stopped_early = epoch < epochs;
            break;
        }
    }
    Ok(EpochOutcome {
        epochs: records,
        best_epoch: best.0,
        best_val: best.1,
        stopped_early,
    })
}

fn gather<'a>(set: &WindowSet<'a>, idx: &[usize]) -> (Vec<ArrayView2<'a, f64>>, Array2<f64>) {
    let mut targets = Array2::zeros((idx.len(), set.n_features()));
    let views = idx
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let s = set.get(i);
            targets.row_mut(r).assign(&s.target);
            s.input
        })
        .collect();
    (views, targets)
}

/// Mean squared error of `model` over the listed windows, all features
/// jointly.
pub(crate) fn windows_mse(model: &Forecaster, set: &WindowSet, idx: &[usize]) -> Result<f64> {
    let mut sse = 0.0;
    for chunk in idx.chunks(512) {
        let (views, targets) = gather(set, chunk);
        let pred = model.predict_batch(&views)?;
        sse += (&pred - &targets).mapv(|e| e * e).sum();
    }
    Ok(sse / (idx.len() * set.n_features()) as f64)
}

/// Evenly strided subset of `0..len` of at most `cap` indices.
pub(crate) fn strided(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len && c > 0 => (0..c).map(|i| i * len / c).collect(),
        _ => (0..len).collect(),
    }
}

struct ModelDriver<'s, 'a> {
    model: Forecaster,
    best: ParamSet,
    adam: Adam,
    batch: usize,
    train: &'s WindowSet<'a>,
    val: &'s WindowSet<'a>,
    val_idx: Vec<usize>,
    max_train: Option<usize>,
    rng: ChaCha8Rng,
}

impl EpochDriver for ModelDriver<'_, '_> {
    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        if let Some(cap) = self.max_train {
            order.truncate(cap.max(1));
        }
        let dropout = self.model.spec().dropout() > 0.0;
        let mut total = 0.0;
        for chunk in order.chunks(self.batch) {
            let (views, targets) = gather(self.train, chunk);
            let rng = if dropout { Some(&mut self.rng) } else { None };
            let (loss, grads) = self.model.loss_and_grads(self.model.params(), &views, targets.view(), rng)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite_loss: Some(total / order.len() as f64),
                });
            }
            total += loss * chunk.len() as f64;
            self.adam.step(self.model.params_mut(), &grads);
            if !self.model.params().all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite_loss: Some(loss),
                });
            }
        }
        Ok(total / order.len() as f64)
    }

    fn validate(&mut self, _epoch: usize) -> Result<f64> {
        match windows_mse(&self.model, self.val, &self.val_idx) {
            Err(Error::NonFinite { .. }) => Ok(f64::NAN),
            other => other,
        }
    }

    fn keep_best(&mut self, _epoch: usize) {
        self.best = self.model.params().clone();
    }
}

/// Trains a fresh model of `spec` shaped by `hp` with Adam on the one-step
/// MSE, returning the parameters of the epoch with the lowest validation
/// loss.
pub fn train<'a>(
    spec: &ModelSpec,
    hp: &HyperParams,
    train_set: &WindowSet<'a>,
    val_set: &WindowSet<'a>,
    cfg: &TrainConfig,
) -> Result<(Forecaster, TrainReport)> {
    let spec = hp.apply(spec)?;
    let model = Forecaster::new(&spec, train_set.n_features(), train_set.window(), cfg.seed)?;
    fit(model, hp, train_set, val_set, cfg)
}

/// Continues training `model` (its architecture is kept; `hp` supplies the
/// learning rate and batch size).
pub fn fit<'a>(
    model: Forecaster,
    hp: &HyperParams,
    train_set: &WindowSet<'a>,
    val_set: &WindowSet<'a>,
    cfg: &TrainConfig,
) -> Result<(Forecaster, TrainReport)> {
    hp.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation windows must be non-empty"));
    }
    for set in [train_set, val_set] {
        if set.window() != model.window() || set.n_features() != model.n_features() {
            return Err(Error::Schema(format!(
                "windows are {} x {}, model expects {} x {}",
                set.window(),
                set.n_features(),
                model.window(),
                model.n_features()
            )));
        }
    }
    let started = Instant::now();
    let kind = model.kind();
    let mut driver = ModelDriver {
        best: model.params().clone(),
        adam: Adam::new(model.params(), hp.learning_rate),
        model,
        batch: hp.batch_size,
        train: train_set,
        val: val_set,
        val_idx: strided(val_set.len(), cfg.max_val_samples),
        max_train: cfg.max_train_samples,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e),
    };
    let outcome = run_epochs(&mut driver, cfg.epochs, cfg.patience)?;
    let mut model = driver.model;
    *model.params_mut() = driver.best;
    let report = TrainReport {
        kind,
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        best_val_mse: outcome.best_val,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        stopped_early: outcome.stopped_early,
    };
    Ok((model, report))
}
