//! Checkpoint container: magic, format version, a JSON header describing
//! the model, then the parameter tensors as little-endian f64 in header
//! order, then a SHA-256 of everything before it.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::evaluate::{mape, metrics, AccuracyMetric, Metrics};
use super::hyper::HyperParams;
use crate::data::{ScalerStats, TimeSeriesDataset, WindowSet};
use crate::error::{Error, Result};
use crate::models::{Forecaster, ModelKind, ModelSpec};
use crate::nn::ParamSet;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"DOSESIM\x01";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    hyper: HyperParams,
    window: usize,
    scaler: ScalerStats,
    tensors: Vec<TensorInfo>,
}

/// A trained model with everything needed to use it on raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub hyper: HyperParams,
    pub window: usize,
    /// Feature schema and standardization, in column order.
    pub scaler: ScalerStats,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(model: &Forecaster, hyper: HyperParams, scaler: ScalerStats) -> Result<Self> {
        if scaler.n_features() != model.n_features() {
            return Err(Error::Schema(format!(
                "scaler has {} features, model {}",
                scaler.n_features(),
                model.n_features()
            )));
        }
        Ok(Checkpoint {
            spec: model.spec().clone(),
            hyper,
            window: model.window(),
            scaler,
            params: model.params().clone(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn features(&self) -> &[String] {
        &self.scaler.features
    }

    pub fn model(&self) -> Result<Forecaster> {
        Forecaster::from_parts(&self.spec, self.scaler.n_features(), self.window, &self.params)
    }

    /// Rejects a dataset whose columns differ from the checkpoint's schema.
    pub fn check_schema(&self, features: &[String]) -> Result<()> {
        if features != self.features() {
            return Err(Error::Schema(format!(
                "checkpoint expects features {:?}, got {:?}",
                self.features(),
                features
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.spec.clone(),
            hyper: self.hyper.clone(),
            window: self.window,
            scaler: self.scaler.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorInfo {
                    name: name.to_string(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(24 + json.len() + 8 * self.params.scalar_count() + DIGEST_LEN);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 + DIGEST_LEN {
            return Err(bad("file too short"));
        }
        if bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted)"));
        }
        let json_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json_end = 20usize.checked_add(json_len).filter(|e| *e <= body.len()).ok_or_else(|| bad("header length out of range"))?;
        let header: Header = serde_json::from_slice(&body[20..json_end])?;
        let mut params = ParamSet::default();
        let mut pos = json_end;
        for t in &header.tensors {
            let n = t.rows * t.cols;
            let end = pos + 8 * n;
            if end > body.len() {
                return Err(bad("tensor data truncated"));
            }
            let values: Vec<f64> = body[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.add(t.name.clone(), Array2::from_shape_vec((t.rows, t.cols), values).map_err(|e| bad(&e.to_string()))?);
            pos = end;
        }
        if pos != body.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let ckpt = Checkpoint {
            spec: header.spec,
            hyper: header.hyper,
            window: header.window,
            scaler: header.scaler,
            params,
        };
        // the layout must match the architecture it claims
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Next raw row after a raw `l x n` window.
    pub fn predict_raw(&self, model: &Forecaster, window: ArrayView2<f64>) -> Result<Array1<f64>> {
        let z = self.scaler.apply(window)?;
        let y = model.predict(z.view())?;
        Ok(y
            .iter()
            .enumerate()
            .map(|(j, v)| self.scaler.invert_value(j, *v))
            .collect())
    }

    /// One-step metrics over every window of a raw dataset with this
    /// checkpoint's schema. Windows never straddle dropped rows.
    pub fn evaluate(&self, ds: &TimeSeriesDataset, metric: AccuracyMetric) -> Result<Metrics> {
        self.check_schema(ds.features())?;
        let model = self.model()?;
        let z = self.scaler.apply(ds.values().view())?;
        let set = WindowSet::new(z.view(), self.window, 1, &ds.contiguous_segments())?;
        let mut pred = Array2::zeros((set.len(), set.n_features()));
        let mut target = pred.clone();
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(512) {
            let views: Vec<_> = chunk.iter().map(|&i| set.get(i).input).collect();
            let p = model.predict_batch(&views)?;
            for (r, &i) in chunk.iter().enumerate() {
                pred.row_mut(i).assign(&p.row(r));
                target.row_mut(i).assign(&set.get(i).target);
            }
        }
        let mut m = metrics(pred.view(), target.view())?;
        if metric == AccuracyMetric::Mape {
            let raw_pred = self.scaler.invert(pred.view())?;
            let raw_target = self.scaler.invert(target.view())?;
            m.accuracy = (1.0 - mape(raw_pred.view(), raw_target.view())?).clamp(0.0, 1.0);
        }
        Ok(m)
    }
}
