use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{FormerConfig, LstmConfig, ModelKind, ModelSpec};

/// Layer counts of one model: none for the linear models, a stack depth for
/// the LSTM, encoder/decoder depths for the attention models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layers {
    None,
    Stacked(usize),
    EncoderDecoder { encoder: usize, decoder: usize },
}

/// The tuned quantities: learning rate, dropout, batch size, layer counts
/// and layer dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub kind: ModelKind,
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub layers: Layers,
    /// Hidden size (LSTM) or model dimension (attention models).
    pub dim: Option<usize>,
}

impl HyperParams {
    /// The published optimum for `kind`.
    pub fn table1(kind: ModelKind) -> HyperParams {
        let former = |lr, decoder| HyperParams {
            kind,
            learning_rate: lr,
            dropout: 0.1,
            batch_size: 64,
            layers: Layers::EncoderDecoder {
                encoder: 2,
                decoder,
            },
            dim: Some(512),
        };
        match kind {
            ModelKind::Lstm => HyperParams {
                kind,
                learning_rate: 1e-6,
                dropout: 0.1,
                batch_size: 32,
                layers: Layers::Stacked(2),
                dim: Some(249),
            },
            ModelKind::Transformer => former(1e-7, 1),
            ModelKind::Informer => former(1e-7, 2),
            ModelKind::Autoformer => former(1e-7, 1),
            ModelKind::DLinear | ModelKind::NLinear => HyperParams {
                kind,
                learning_rate: 1e-6,
                dropout: 0.1,
                batch_size: 16,
                layers: Layers::None,
                dim: None,
            },
        }
    }

    /// Small, fast settings with larger learning rates, for CPU-sized data.
    pub fn desk(kind: ModelKind) -> HyperParams {
        HyperParams::from_spec(&ModelSpec::default_for(kind), 1e-3, 32)
    }

    /// Reads layer counts, dimension and dropout off an architecture.
    pub fn from_spec(spec: &ModelSpec, learning_rate: f64, batch_size: usize) -> HyperParams {
        let (layers, dim) = match spec {
            ModelSpec::Lstm(c) => (Layers::Stacked(c.layers), Some(c.hidden)),
            ModelSpec::Transformer(c) | ModelSpec::Informer(c) | ModelSpec::Autoformer(c) => (
                Layers::EncoderDecoder {
                    encoder: c.encoder_layers,
                    decoder: c.decoder_layers,
                },
                Some(c.d_model),
            ),
            ModelSpec::DLinear(_) | ModelSpec::NLinear(_) => (Layers::None, None),
        };
        HyperParams {
            kind: spec.kind(),
            learning_rate,
            dropout: spec.dropout(),
            batch_size,
            layers,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let shape_ok = match (self.kind, self.layers, self.dim) {
            (ModelKind::Lstm, Layers::Stacked(n), Some(d)) => n > 0 && d > 0,
            (k, Layers::EncoderDecoder { encoder, decoder }, Some(d)) if k.is_former() => {
                encoder > 0 && decoder > 0 && d > 0
            }
            (ModelKind::DLinear | ModelKind::NLinear, Layers::None, None) => true,
            _ => false,
        };
        if !shape_ok {
            return Err(Error::config(format!(
                "layer counts {:?} and dimension {:?} do not fit a {} model",
                self.layers, self.dim, self.kind
            )));
        }
        Ok(())
    }

    /// `base` with this point's layer counts, dimension and dropout. When
    /// the dimension changes, the feed-forward width follows as twice the
    /// dimension and the head count drops to the largest divisor not above
    /// the base count.
    pub fn apply(&self, base: &ModelSpec) -> Result<ModelSpec> {
        self.validate()?;
        if base.kind() != self.kind {
            return Err(Error::config(format!(
                "hyper-parameters for {} applied to a {} architecture",
                self.kind,
                base.kind()
            )));
        }
        Ok(match (base, self.layers, self.dim) {
            (ModelSpec::Lstm(c), Layers::Stacked(layers), Some(hidden)) => ModelSpec::Lstm(LstmConfig {
                hidden,
                layers,
                dropout: self.dropout,
                ..c.clone()
            }),
            (ModelSpec::Transformer(c) | ModelSpec::Informer(c) | ModelSpec::Autoformer(c),
             Layers::EncoderDecoder { encoder, decoder }, Some(d)) => {
                let mut heads = c.heads.min(d).max(1);
                while d % heads != 0 {
                    heads -= 1;
                }
                let cfg = FormerConfig {
                    d_model: d,
                    heads,
                    encoder_layers: encoder,
                    decoder_layers: decoder,
                    d_ff: if d == c.d_model { c.d_ff } else { 2 * d },
                    dropout: self.dropout,
                    ..c.clone()
                };
                match base {
                    ModelSpec::Transformer(_) => ModelSpec::Transformer(cfg),
                    ModelSpec::Informer(_) => ModelSpec::Informer(cfg),
                    _ => ModelSpec::Autoformer(cfg),
                }
            }
            // a single linear map has no dropout site
            (ModelSpec::DLinear(_) | ModelSpec::NLinear(_), Layers::None, None) => base.clone(),
            _ => unreachable!("validated above"),
        })
    }
}

/// One search dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    LogUniform { low: f64, high: f64 },
    Uniform { low: f64, high: f64 },
    Int { low: i64, high: i64 },
    Choice(Vec<f64>),
}

impl Axis {
    pub fn contains(&self, x: f64) -> bool {
        match self {
            Axis::LogUniform { low, high } | Axis::Uniform { low, high } => {
                x >= *low && x <= *high
            }
            Axis::Int { low, high } => x.fract() == 0.0 && x >= *low as f64 && x <= *high as f64,
            Axis::Choice(values) => values.contains(&x),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Axis::LogUniform { low, high } => *low > 0.0 && low < high && high.is_finite(),
            Axis::Uniform { low, high } => low < high && low.is_finite() && high.is_finite(),
            Axis::Int { low, high } => low <= high,
            Axis::Choice(values) => !values.is_empty() && values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("empty or invalid search axis {self:?}")))
        }
    }
}

/// Named axes over the tuned quantities of one model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub kind: ModelKind,
    pub axes: Vec<(String, Axis)>,
}

const LEARNING_RATE: &str = "learning_rate";
const DROPOUT: &str = "dropout";
const BATCH_SIZE: &str = "batch_size";
const LAYERS: &str = "layers";
const ENCODER_LAYERS: &str = "encoder_layers";
const DECODER_LAYERS: &str = "decoder_layers";
const DIM: &str = "dim";

impl SearchSpace {
    /// Wide ranges covering every published configuration.
    pub fn full(kind: ModelKind) -> SearchSpace {
        let powers = |lo: u32, hi: u32| Axis::Choice((lo..=hi).map(|p| 2f64.powi(p as i32)).collect());
        SearchSpace::build(
            kind,
            Axis::LogUniform { low: 1e-8, high: 1e-1 },
            Axis::Uniform { low: 0.0, high: 0.5 },
            powers(3, 7),
            Axis::Int { low: 1, high: 3 },
            Axis::Int { low: 1, high: 2 },
            Axis::Int { low: 4, high: 512 },
            powers(3, 9),
        )
    }

    /// Narrow ranges that train in seconds to minutes on a laptop CPU.
    pub fn desk(kind: ModelKind) -> SearchSpace {
        SearchSpace::build(
            kind,
            Axis::LogUniform { low: 3e-4, high: 1e-2 },
            Axis::Uniform { low: 0.0, high: 0.1 },
            Axis::Choice(vec![16.0, 32.0, 64.0]),
            Axis::Int { low: 1, high: 2 },
            Axis::Int { low: 1, high: 2 },
            Axis::Int { low: 8, high: 48 },
            Axis::Choice(vec![8.0, 16.0]),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: ModelKind,
        lr: Axis,
        dropout: Axis,
        batch: Axis,
        depth: Axis,
        decoder_depth: Axis,
        hidden: Axis,
        d_model: Axis,
    ) -> SearchSpace {
        let mut axes = vec![(LEARNING_RATE.to_string(), lr), (DROPOUT.into(), dropout)];
        axes.push((BATCH_SIZE.into(), batch));
        match kind {
            ModelKind::Lstm => {
                axes.push((LAYERS.into(), depth));
                axes.push((DIM.into(), hidden));
            }
            k if k.is_former() => {
                axes.push((ENCODER_LAYERS.into(), depth));
                axes.push((DECODER_LAYERS.into(), decoder_depth));
                axes.push((DIM.into(), d_model));
            }
            _ => {}
        }
        SearchSpace { kind, axes }
    }

    pub fn validate(&self) -> Result<()> {
        for (_, axis) in &self.axes {
            axis.validate()?;
        }
        // every required quantity must have an axis
        self.decode(&self.axes.iter().map(|(_, a)| first_point(a)).collect::<Vec<_>>())?;
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.axes.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn value(&self, point: &[f64], name: &str) -> Option<f64> {
        self.axes.iter().position(|(n, _)| n == name).map(|i| point[i])
    }

    /// Hyper-parameters at `point` (one coordinate per axis). Dropout is
    /// carried for the linear models too but has no effect on them.
    pub fn decode(&self, point: &[f64]) -> Result<HyperParams> {
        if point.len() != self.axes.len() {
            return Err(Error::shape(format!(
                "point has {} coordinates for {} axes",
                point.len(),
                self.axes.len()
            )));
        }
        let need = |name: &str| {
            self.value(point, name)
                .ok_or_else(|| Error::config(format!("search space for {} lacks `{name}`", self.kind)))
        };
        let count = |name: &str| need(name).map(|v| v.round() as usize);
        let (layers, dim) = match self.kind {
            ModelKind::Lstm => (Layers::Stacked(count(LAYERS)?), Some(count(DIM)?)),
            k if k.is_former() => (
                Layers::EncoderDecoder {
                    encoder: count(ENCODER_LAYERS)?,
                    decoder: count(DECODER_LAYERS)?,
                },
                Some(count(DIM)?),
            ),
            _ => (Layers::None, None),
        };
        let hp = HyperParams {
            kind: self.kind,
            learning_rate: need(LEARNING_RATE)?,
            dropout: need(DROPOUT)?,
            batch_size: count(BATCH_SIZE)?,
            layers,
            dim,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Coordinates of `hp`, in axis order.
    pub fn encode(&self, hp: &HyperParams) -> Vec<f64> {
        let (depth, enc, dec) = match hp.layers {
            Layers::None => (0, 0, 0),
            Layers::Stacked(n) => (n, 0, 0),
            Layers::EncoderDecoder { encoder, decoder } => (0, encoder, decoder),
        };
        self.axes
            .iter()
            .map(|(name, _)| match name.as_str() {
                LEARNING_RATE => hp.learning_rate,
                DROPOUT => hp.dropout,
                BATCH_SIZE => hp.batch_size as f64,
                LAYERS => depth as f64,
                ENCODER_LAYERS => enc as f64,
                DECODER_LAYERS => dec as f64,
                DIM => hp.dim.unwrap_or(0) as f64,
                _ => f64::NAN,
            })
            .collect()
    }

    /// Whether `hp` is a point of this space.
    pub fn admits(&self, hp: &HyperParams) -> bool {
        if hp.kind != self.kind {
            return false;
        }
        let point = self.encode(hp);
        let inside = self
            .axes
            .iter()
            .zip(&point)
            .all(|((_, axis), x)| axis.contains(*x));
        inside && self.decode(&point).map(|d| d == *hp).unwrap_or(false)
    }
}

fn first_point(axis: &Axis) -> f64 {
    match axis {
        Axis::LogUniform { low, .. } | Axis::Uniform { low, .. } => *low,
        Axis::Int { low, .. } => *low as f64,
        Axis::Choice(v) => v.first().copied().unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_rows() {
        let lstm = HyperParams::table1(ModelKind::Lstm);
        assert_eq!(
            (lstm.learning_rate, lstm.dropout, lstm.batch_size, lstm.layers, lstm.dim),
            (1e-6, 0.1, 32, Layers::Stacked(2), Some(249))
        );
        let inf = HyperParams::table1(ModelKind::Informer);
        assert_eq!(inf.layers, Layers::EncoderDecoder { encoder: 2, decoder: 2 });
        assert_eq!((inf.learning_rate, inf.batch_size, inf.dim), (1e-7, 64, Some(512)));
        let dl = HyperParams::table1(ModelKind::DLinear);
        assert_eq!((dl.learning_rate, dl.batch_size, dl.layers), (1e-6, 16, Layers::None));
    }

    #[test]
    fn presets_apply_to_architectures() {
        for kind in ModelKind::ALL {
            let hp = HyperParams::table1(kind);
            let spec = hp.apply(&ModelSpec::default_for(kind)).unwrap();
            let back = HyperParams::from_spec(&spec, hp.learning_rate, hp.batch_size);
            if kind.is_former() || kind == ModelKind::Lstm {
                assert_eq!(back, hp);
            }
            assert!(SearchSpace::full(kind).admits(&hp));
            assert!(SearchSpace::desk(kind).validate().is_ok());
        }
    }

    #[test]
    fn invalid_values_rejected() {
        let mut hp = HyperParams::desk(ModelKind::Lstm);
        hp.learning_rate = 0.0;
        assert!(hp.validate().is_err());
        let mut hp = HyperParams::desk(ModelKind::Lstm);
        hp.dropout = 1.0;
        assert!(hp.validate().is_err());
        let mut hp = HyperParams::desk(ModelKind::Lstm);
        hp.layers = Layers::None;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn outside_points_not_admitted() {
        let mut hp = HyperParams::table1(ModelKind::Transformer);
        hp.dim = Some(500);
        assert!(!SearchSpace::full(ModelKind::Transformer).admits(&hp));
        assert!(!SearchSpace::full(ModelKind::Lstm).admits(&HyperParams::table1(ModelKind::Informer)));
    }
}
