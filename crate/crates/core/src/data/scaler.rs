use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature z-score statistics, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub features: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

impl ScalerStats {
    pub fn fit(features: &[String], data: ArrayView2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Dataset("cannot fit a scaler on zero rows".into()));
        }
        if features.len() != data.ncols() {
            return Err(Error::shape(format!(
                "{} feature names for {} columns",
                features.len(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "scaler input".into(),
            });
        }
        let mean: Array1<f64> = data.mean_axis(Axis(0)).expect("non-empty");
        let std = data.std_axis(Axis(0), 0.0);
        for (j, s) in std.iter().enumerate() {
            if *s <= 1e-12 * (1.0 + mean[j].abs()) {
                return Err(Error::ZeroVariance(features[j].clone()));
            }
        }
        Ok(ScalerStats {
            features: features.to_vec(),
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.n_features() {
            return Err(Error::shape(format!(
                "scaler fitted on {} features, got {cols}",
                self.n_features()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data.ncols())?;
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        Ok(out)
    }

    pub fn invert(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data.ncols())?;
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        Ok(out)
    }

    pub fn apply_value(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }

    pub fn invert_value(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }
}
