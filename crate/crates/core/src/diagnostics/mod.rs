//! Compounding-error curves for rollouts, the regime sequence suite and
//! report rendering.

mod report;

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{ScalerStats, TimeSeriesDataset};
use crate::env::{replay_rollout, Dynamics, EnvConfig, Environment, RolloutTrace};
use crate::error::{Error, Result};
use crate::plant::{
    PULSE_OFFSET, REGIME_CYCLE, SENSOR_BURST_OFFSET, SENSOR_BURST_PERIOD, TREND_OFFSET,
};

pub use report::{render_report, summary_csv_string, SummaryRow};

/// Per-step `Σ_d (ŝ_{t,d} − s_{t,d})²` of two aligned matrices (rows are
/// steps), already in comparable units.
pub fn stepwise_mse(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<Vec<f64>> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} and truth {:?} are not aligned",
            pred.dim(),
            truth.dim()
        )));
    }
    Ok(pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, t)| {
            let mut acc = 0.0;
            for d in 0..p.len() {
                let e = p[d] - t[d];
                acc += e * e;
            }
            acc
        })
        .collect())
}

/// Error vectors `ŝ_t − s_t` of a trace against the dataset rows it
/// predicted, in the scaler's standardized units.
pub fn trace_errors(trace: &RolloutTrace, data: &TimeSeriesDataset, scaler: &ScalerStats) -> Result<Array2<f64>> {
    let pred = trace.predicted_matrix();
    let rows: Vec<usize> = trace.records.iter().map(|r| r.row).collect();
    if let Some(&bad) = rows.iter().find(|&&r| r >= data.len()) {
        return Err(Error::shape(format!("trace row {bad} beyond the dataset")));
    }
    let truth = data.values().select(ndarray::Axis(0), &rows);
    if pred.ncols() != truth.ncols() && !rows.is_empty() {
        return Err(Error::shape("trace and dataset widths differ"));
    }
    let zp = scaler.apply(pred.view())?;
    let zt = scaler.apply(truth.view())?;
    Ok(zp - zt)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `(x − min) / (max − min)`; a constant curve maps to zeros.
    #[default]
    MinMax,
    /// `x / max`; an all-zero curve maps to zeros.
    DivideByMax,
}

pub fn normalize_curve(mse: &[f64], rule: Normalization) -> Vec<f64> {
    let max = mse.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match rule {
        Normalization::MinMax => {
            let min = mse.iter().copied().fold(f64::INFINITY, f64::min);
            let span = max - min;
            if span > 0.0 {
                mse.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect()
            } else {
                vec![0.0; mse.len()]
            }
        }
        Normalization::DivideByMax => {
            if max > 0.0 {
                mse.iter().map(|v| (v / max).clamp(0.0, 1.0)).collect()
            } else {
                vec![0.0; mse.len()]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub early: f64,
    pub late: f64,
    /// `late / early`; 1 when both are zero, infinite when only early is.
    pub ratio: f64,
}

/// Means over the first and last tenth of the steps (at least two each).
pub fn growth_statistic(mse: &[f64]) -> Result<Growth> {
    if mse.len() < 20 {
        return Err(Error::TooShort {
            what: "error curve for growth statistic".into(),
            required: 20,
            actual: mse.len(),
        });
    }
    let k = mse.len() / 10;
    let early = mse[..k].iter().sum::<f64>() / k as f64;
    let late = mse[mse.len() - k..].iter().sum::<f64>() / k as f64;
    let ratio = if early > 0.0 {
        late / early
    } else if late == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(Growth { early, late, ratio })
}

/// Pointwise mean of equally long curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = curves.first() else {
        return Err(Error::shape("no curves to average"));
    };
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::shape("curves differ in length"));
    }
    Ok((0..first.len())
        .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / curves.len() as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub model: String,
    pub sequence: String,
    pub start: usize,
    pub mse: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ErrorCurve {
    pub fn from_trace(
        model: &str,
        sequence: &str,
        trace: &RolloutTrace,
        data: &TimeSeriesDataset,
        scaler: &ScalerStats,
        rule: Normalization,
    ) -> Result<Self> {
        let errors = trace_errors(trace, data, scaler)?;
        let zeros = Array2::zeros(errors.dim());
        let mse = stepwise_mse(errors.view(), zeros.view())?;
        Ok(Self::from_mse(model, sequence, trace.start, mse, rule))
    }

    /// Uses the per-step errors stored in the trace, as read back from a
    /// trace file.
    pub fn from_recorded(model: &str, sequence: &str, trace: &RolloutTrace, rule: Normalization) -> Result<Self> {
        let mse = trace
            .records
            .iter()
            .map(|r| r.step_mse.ok_or_else(|| Error::Report(format!("step {} of `{sequence}` has no error", r.t))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_mse(model, sequence, trace.start, mse, rule))
    }

    pub fn from_mse(model: &str, sequence: &str, start: usize, mse: Vec<f64>, rule: Normalization) -> Self {
        ErrorCurve {
            model: model.into(),
            sequence: sequence.into(),
            start,
            normalized: normalize_curve(&mse, rule),
            mse,
        }
    }

    pub fn growth(&self) -> Result<Growth> {
        growth_statistic(&self.mse)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub label: String,
    pub start: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSuite {
    pub entries: Vec<SequenceEntry>,
}

/// Label and offset (within the repeating schedule) of each regime.
const REGIMES: [(&str, usize, usize); 4] = [
    ("steady", REGIME_CYCLE - 100, REGIME_CYCLE),
    ("trend-shift", TREND_OFFSET, REGIME_CYCLE),
    ("disturbance", PULSE_OFFSET, REGIME_CYCLE),
    ("sensor-failure", SENSOR_BURST_OFFSET, SENSOR_BURST_PERIOD),
];

/// Rollouts begin this many steps before the event they should cover.
pub const EVENT_LEAD: usize = 20;

impl SequenceSuite {
    /// One start per regime of the synthetic plant's schedule (dataset rows
    /// aligned with simulation steps), each leaving `window` rows of history
    /// and `m` rows of truth. A regime is looked for in `preferred` first,
    /// then anywhere in `0..len`; regimes that fit nowhere are left out.
    pub fn regimes(preferred: Range<usize>, len: usize, window: usize, m: usize) -> SequenceSuite {
        let mut entries = Vec::new();
        for (label, offset, period) in REGIMES {
            let lead = if label == "steady" { 0 } else { EVENT_LEAD };
            let first_in = |rows: Range<usize>| {
                (0..)
                    .map(|i| (i * period + offset).saturating_sub(lead))
                    .take_while(|p| p + m <= rows.end)
                    .find(|p| *p >= rows.start.max(window))
            };
            match first_in(preferred.start..preferred.end.min(len)).or_else(|| first_in(0..len)) {
                Some(start) => entries.push(SequenceEntry {
                    label: label.into(),
                    start,
                }),
                None => log::warn!("no `{label}` sequence of {m} steps fits {len} rows"),
            }
        }
        SequenceSuite { entries }
    }

    /// `count` starts spread evenly over the admissible range.
    pub fn evenly_spaced(rows: Range<usize>, window: usize, m: usize, count: usize) -> Result<SequenceSuite> {
        let lo = rows.start.max(window);
        if count == 0 || rows.end < m || rows.end - m < lo {
            return Err(Error::TooShort {
                what: "range for rollout starts".into(),
                required: lo + m,
                actual: rows.end,
            });
        }
        let hi = rows.end - m;
        let entries = (0..count)
            .map(|i| {
                let start = if count == 1 { lo } else { lo + i * (hi - lo) / (count - 1) };
                SequenceEntry {
                    label: format!("start-{start}"),
                    start,
                }
            })
            .collect();
        Ok(SequenceSuite { entries })
    }

    pub fn validate(&self, window: usize, m: usize, len: usize) -> Result<()> {
        for e in &self.entries {
            if e.start < window || e.start + m > len {
                return Err(Error::config(format!(
                    "sequence `{}` at {} needs rows [{}, {})",
                    e.label,
                    e.start,
                    e.start.saturating_sub(window),
                    e.start + m
                )));
            }
        }
        Ok(())
    }
}

/// One (model, sequence) cell of a multi-sequence evaluation.
#[derive(Debug, Clone)]
pub struct Cell {
    pub model: String,
    pub sequence: String,
    pub outcome: std::result::Result<(RolloutTrace, ErrorCurve), String>,
}

/// Replays every sequence with every model. A failing cell records its
/// error and the others still run.
pub fn multi_sequence_eval<D: Dynamics + Clone>(
    models: &[(String, D)],
    data: &TimeSeriesDataset,
    suite: &SequenceSuite,
    env_cfg: &EnvConfig,
    rule: Normalization,
) -> Result<Vec<Cell>> {
    if let Some((_, first)) = models.first() {
        for (name, m) in models {
            if m.features() != first.features() {
                return Err(Error::Schema(format!("model `{name}` uses a different feature set")));
            }
        }
    }
    let mut cells = Vec::with_capacity(models.len() * suite.entries.len());
    for (name, dynamics) in models {
        for seq in &suite.entries {
            let cfg = EnvConfig {
                start: seq.start,
                ..env_cfg.clone()
            };
            let outcome = Environment::new(dynamics.clone(), data.clone(), cfg)
                .and_then(|mut env| {
                    let trace = replay_rollout(&mut env)?;
                    let curve = ErrorCurve::from_trace(name, &seq.label, &trace, data, dynamics.scaler(), rule)?;
                    Ok((trace, curve))
                })
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("{name} on {}: {e}", seq.label);
            }
            cells.push(Cell {
                model: name.clone(),
                sequence: seq.label.clone(),
                outcome,
            });
        }
    }
    Ok(cells)
}
