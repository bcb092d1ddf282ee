use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::train::{strided, windows_mse};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::models::Forecaster;

/// How `accuracy` is derived. `Nmse` gives 1 − NMSE in standardized space;
/// `Mape` gives 1 − mean absolute percentage error in raw units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMetric {
    #[default]
    Nmse,
    Mape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean squared one-step error over all features.
    pub mse: f64,
    /// `mse` divided by the variance of the targets (per-feature means).
    pub nmse: f64,
    /// Clamped to [0, 1].
    pub accuracy: f64,
    pub samples: usize,
}

/// Joint metrics of `pred` against `target` (rows are samples). A constant
/// target gives nmse 0 when predicted exactly and infinity otherwise.
pub fn metrics(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Metrics> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("no samples to evaluate"));
    }
    let count = pred.len() as f64;
    let mse = (&pred - &target).mapv(|e| e * e).sum() / count;
    let mut ss = 0.0;
    for col in target.columns() {
        let m = col.mean().unwrap_or(0.0);
        ss += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let var = ss / count;
    let nmse = if var > 0.0 {
        mse / var
    } else if mse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(Metrics {
        mse,
        nmse,
        accuracy: (1.0 - nmse).clamp(0.0, 1.0),
        samples: pred.nrows(),
    })
}

/// Mean of |ŷ − y| / |y| over entries with a non-zero target.
pub fn mape(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape("prediction and target shapes differ"));
    }
    let (sum, n) = pred
        .iter()
        .zip(target.iter())
        .filter(|(_, y)| y.abs() > 1e-12)
        .fold((0.0, 0usize), |(s, n), (p, y)| (s + ((p - y) / y).abs(), n + 1));
    if n == 0 {
        return Err(Error::Dataset("every target is zero; MAPE undefined".into()));
    }
    Ok(sum / n as f64)
}

/// One-step metrics of `model` over `windows` (standardized space).
/// `max_samples` evaluates an evenly strided subset.
pub fn evaluate(model: &Forecaster, windows: &WindowSet, max_samples: Option<usize>) -> Result<Metrics> {
    if windows.window() != model.window() || windows.n_features() != model.n_features() {
        return Err(Error::Schema(format!(
            "windows are {} x {}, model expects {} x {}",
            windows.window(),
            windows.n_features(),
            model.window(),
            model.n_features()
        )));
    }
    let idx = strided(windows.len(), max_samples);
    let mut pred = ndarray::Array2::zeros((idx.len(), windows.n_features()));
    let mut target = pred.clone();
    for (c, chunk) in idx.chunks(512).enumerate() {
        let views: Vec<_> = chunk.iter().map(|&i| windows.get(i).input).collect();
        let p = model.predict_batch(&views)?;
        for (r, &i) in chunk.iter().enumerate() {
            pred.row_mut(c * 512 + r).assign(&p.row(r));
            target.row_mut(c * 512 + r).assign(&windows.get(i).target);
        }
    }
    metrics(pred.view(), target.view())
}

/// MSE only, for validation during tuning.
pub fn validation_mse(model: &Forecaster, windows: &WindowSet, max_samples: Option<usize>) -> Result<f64> {
    windows_mse(model, windows, &strided(windows.len(), max_samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn perfect_predictions() {
        let y = array![[1.0, 2.0], [3.0, 5.0], [0.0, 1.0]];
        let m = metrics(y.view(), y.view()).unwrap();
        assert_eq!((m.mse, m.nmse, m.accuracy), (0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_predictor_has_unit_nmse() {
        let y = array![[1.0, 2.0], [3.0, 5.0], [2.0, -1.0], [6.0, 2.0]];
        let mut p = Array2::zeros(y.dim());
        for (j, col) in y.columns().into_iter().enumerate() {
            p.column_mut(j).fill(col.mean().unwrap());
        }
        let m = metrics(p.view(), y.view()).unwrap();
        assert!((m.nmse - 1.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.0);
    }

    #[test]
    fn accuracy_clamped() {
        let y = array![[0.0], [1.0]];
        let p = array![[10.0], [-10.0]];
        assert_eq!(metrics(p.view(), y.view()).unwrap().accuracy, 0.0);
        assert!(metrics(p.view(), array![[1.0, 2.0], [0.0, 0.0]].view()).is_err());
    }

    #[test]
    fn mape_skips_zero_targets() {
        let y = array![[2.0, 0.0]];
        let p = array![[3.0, 5.0]];
        assert_eq!(mape(p.view(), y.view()).unwrap(), 0.5);
    }
}
