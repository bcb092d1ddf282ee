//! The full preprocessing chain: clean, pick features, add time encodings,
//! split, standardize. Every statistic is fitted on the training rows.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::clean::{clean, CleanPolicy, RepairLog};
use super::dataset::TimeSeriesDataset;
use super::scaler::ScalerStats;
use super::select::{
    append_time_features, pearson_rank, select_time_features, Correlation, TimeEncoding,
    TimeFeatureConfig, TimeFeatureSelection,
};
use super::split::{SplitRanges, SplitSpec};
use super::window::WindowSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub clean: CleanPolicy,
    pub target: String,
    /// Kept whatever their correlation (the manipulated variable).
    pub always_keep: Vec<String>,
    /// Other features are kept when |r| with the target reaches this.
    pub min_abs_correlation: f64,
    /// `None` skips time features entirely.
    pub time_features: Option<TimeFeatureConfig>,
    pub split: SplitSpec,
    pub window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            clean: CleanPolicy::default(),
            target: "phosphate".into(),
            always_keep: vec!["dosage".into()],
            min_abs_correlation: 0.2,
            time_features: Some(TimeFeatureConfig::default()),
            split: SplitSpec::default(),
            window: 240,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.window == 0 {
            return Err(Error::config("window must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_abs_correlation) {
            return Err(Error::config(format!(
                "min_abs_correlation must lie in [0, 1], got {}",
                self.min_abs_correlation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// What preprocessing decided, for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub features: Vec<String>,
    pub correlations: Vec<Correlation>,
    pub time_features: Option<TimeFeatureSelection>,
    pub ranges: SplitRanges,
    pub window: usize,
    pub scaler: ScalerStats,
}

/// A processed series with its split and training-fitted scaler.
#[derive(Debug, Clone)]
pub struct Prepared {
    data: TimeSeriesDataset,
    ranges: SplitRanges,
    window: usize,
    scaler: ScalerStats,
    standardized: Array2<f64>,
    segments: Vec<Range<usize>>,
}

impl Prepared {
    /// Splits an already processed dataset and fits the scaler on its
    /// training rows.
    pub fn new(data: TimeSeriesDataset, split: &SplitSpec, window: usize) -> Result<Self> {
        if data.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("processed data must be finite".into()));
        }
        let ranges = split.ranges(data.len(), window)?;
        let scaler = ScalerStats::fit(
            data.features(),
            data.values().slice(ndarray::s![ranges.train.clone(), ..]),
        )?;
        let standardized = scaler.apply(data.values().view())?;
        let segments = data.contiguous_segments();
        Ok(Prepared {
            data,
            ranges,
            window,
            scaler,
            standardized,
            segments,
        })
    }

    pub fn data(&self) -> &TimeSeriesDataset {
        &self.data
    }

    pub fn features(&self) -> &[String] {
        self.data.features()
    }

    pub fn ranges(&self) -> &SplitRanges {
        &self.ranges
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn scaler(&self) -> &ScalerStats {
        &self.scaler
    }

    /// The whole series in scaler units.
    pub fn standardized(&self) -> &Array2<f64> {
        &self.standardized
    }

    pub fn range(&self, part: Part) -> Range<usize> {
        match part {
            Part::Train => self.ranges.train.clone(),
            Part::Validation => self.ranges.validation.clone(),
            Part::Test => self.ranges.test.clone(),
        }
    }

    /// Raw rows of one part.
    pub fn raw(&self, part: Part) -> TimeSeriesDataset {
        self.data.slice_rows(self.range(part))
    }

    /// One-step windows lying wholly inside `part` and inside a gap-free
    /// stretch.
    pub fn windows(&self, part: Part) -> Result<WindowSet<'_>> {
        let r = self.range(part);
        let segs: Vec<Range<usize>> = self
            .segments
            .iter()
            .map(|s| s.start.max(r.start)..s.end.min(r.end))
            .filter(|s| s.start < s.end)
            .collect();
        WindowSet::new(self.standardized.view(), self.window, 1, &segs)
    }
}

/// Runs the chain on a raw dataset. Correlations and time-feature scores
/// only see the rows that end up in the training split.
pub fn preprocess(ds: &TimeSeriesDataset, cfg: &PreprocessConfig) -> Result<(Prepared, PreprocessSummary, RepairLog)> {
    cfg.validate()?;
    let (cleaned, log) = clean(ds, &cfg.clean)?;
    cleaned.require_feature(&cfg.target)?;
    for f in &cfg.always_keep {
        cleaned.require_feature(f)?;
    }
    // the split only depends on the row count, which selection keeps
    let ranges = cfg.split.ranges(cleaned.len(), cfg.window)?;
    let train = cleaned.slice_rows(ranges.train.clone());
    let correlations = pearson_rank(&train, &cfg.target)?;
    let mut features = vec![cfg.target.clone()];
    for c in &correlations {
        let forced = cfg.always_keep.contains(&c.feature);
        if forced || (!c.zero_variance && c.r.abs() >= cfg.min_abs_correlation) {
            features.push(c.feature.clone());
        }
    }
    // keep the dataset's column order
    features.sort_by_key(|f| cleaned.feature_index(f));
    let mut data = cleaned.select_features(&features)?;
    let time_features = match &cfg.time_features {
        Some(tcfg) => {
            let sel = select_time_features(&train, &cfg.target, tcfg)?;
            append_time_features(&mut data, &sel.selected)?;
            Some(sel)
        }
        None => None,
    };
    let prepared = Prepared::new(data, &cfg.split, cfg.window)?;
    let summary = PreprocessSummary {
        features: prepared.features().to_vec(),
        correlations,
        time_features,
        ranges: prepared.ranges().clone(),
        window: cfg.window,
        scaler: prepared.scaler().clone(),
    };
    Ok((prepared, summary, log))
}

/// Selected time encodings of a summary, empty when none ran.
pub fn selected_encodings(summary: &PreprocessSummary) -> Vec<TimeEncoding> {
    summary
        .time_features
        .as_ref()
        .map(|s| s.selected.clone())
        .unwrap_or_default()
}
