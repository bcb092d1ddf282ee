use std::f64::consts::TAU;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::dataset::TimeSeriesDataset;
use super::gbrt::{gain_importance, BoostConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub feature: String,
    /// 0 when either column has zero variance.
    pub r: f64,
    pub zero_variance: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return f64::NAN;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Every non-target feature ordered by |r| with the target, strongest
/// first. Zero-variance features sort last with r = 0 and a flag.
pub fn pearson_rank(ds: &TimeSeriesDataset, target: &str) -> Result<Vec<Correlation>> {
    let t = ds.require_feature(target)?;
    if ds.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Dataset(
            "pearson ranking needs a cleaned dataset without missing values".into(),
        ));
    }
    let y = ds.values().column(t).to_vec();
    let mut out: Vec<Correlation> = ds
        .features()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != t)
        .map(|(j, f)| {
            let r = pearson(&ds.values().column(j).to_vec(), &y);
            Correlation {
                feature: f.clone(),
                r: if r.is_finite() { r } else { 0.0 },
                zero_variance: !r.is_finite(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.zero_variance, -a.r.abs())
            .partial_cmp(&(b.zero_variance, -b.r.abs()))
            .expect("finite")
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeEncoding {
    HourOfDay,
    DayOfWeek,
    MonthOfYear,
}

impl TimeEncoding {
    pub const ALL: [TimeEncoding; 3] = [
        TimeEncoding::HourOfDay,
        TimeEncoding::DayOfWeek,
        TimeEncoding::MonthOfYear,
    ];

    pub fn prefix(&self) -> &'static str {
        match self {
            TimeEncoding::HourOfDay => "hour",
            TimeEncoding::DayOfWeek => "weekday",
            TimeEncoding::MonthOfYear => "month",
        }
    }

    pub fn period(&self) -> Duration {
        match self {
            TimeEncoding::HourOfDay => Duration::days(1),
            TimeEncoding::DayOfWeek => Duration::days(7),
            TimeEncoding::MonthOfYear => Duration::days(365),
        }
    }

    /// Position within the cycle as a fraction in [0, 1).
    pub fn phase(&self, t: &DateTime<Utc>) -> f64 {
        match self {
            TimeEncoding::HourOfDay => t.num_seconds_from_midnight() as f64 / 86_400.0,
            TimeEncoding::DayOfWeek => {
                (t.weekday().num_days_from_monday() as f64
                    + t.num_seconds_from_midnight() as f64 / 86_400.0)
                    / 7.0
            }
            TimeEncoding::MonthOfYear => t.ordinal0() as f64 / 365.25,
        }
    }

    pub fn column_names(&self) -> [String; 2] {
        [
            format!("{}_sin", self.prefix()),
            format!("{}_cos", self.prefix()),
        ]
    }

    pub fn encode(&self, t: &DateTime<Utc>) -> [f64; 2] {
        let a = TAU * self.phase(t);
        // software sin/cos: the result must not depend on whether the
        // compiler fuses the pair into one sincos call at a given site
        [libm::sin(a), libm::cos(a)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeFeatureConfig {
    /// Number of boosting rounds.
    pub budget: usize,
    pub threshold: f64,
    pub max_samples: usize,
}

impl Default for TimeFeatureConfig {
    fn default() -> Self {
        TimeFeatureConfig {
            budget: 50,
            threshold: 0.05,
            max_samples: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFeatureSelection {
    pub scores: Vec<(TimeEncoding, f64)>,
    pub selected: Vec<TimeEncoding>,
    /// Candidates whose period exceeds the span of the data.
    pub skipped: Vec<TimeEncoding>,
}

/// Scores the sin/cos encoding of each time candidate by boosted-tree gain
/// on the target and keeps those above the threshold.
pub fn select_time_features(
    ds: &TimeSeriesDataset,
    target: &str,
    cfg: &TimeFeatureConfig,
) -> Result<TimeFeatureSelection> {
    if cfg.budget == 0 {
        return Err(Error::config(
            "time feature budget must be at least one tree",
        ));
    }
    let t = ds.require_feature(target)?;
    let ts = ds.timestamps();
    let span = match (ts.first(), ts.last()) {
        (Some(a), Some(b)) => *b - *a,
        _ => return Err(Error::Dataset("empty dataset".into())),
    };
    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for enc in TimeEncoding::ALL {
        if span < enc.period() {
            log::warn!(
                "skipping {} encoding: data spans {} h, period is {} h",
                enc.prefix(),
                span.num_hours(),
                enc.period().num_hours()
            );
            skipped.push(enc);
        } else {
            candidates.push(enc);
        }
    }
    if candidates.is_empty() {
        return Ok(TimeFeatureSelection {
            scores: Vec::new(),
            selected: Vec::new(),
            skipped,
        });
    }
    let stride = ds.len().div_ceil(cfg.max_samples.max(1)).max(1);
    let rows: Vec<usize> = (0..ds.len()).step_by(stride).collect();
    let mut x = Array2::zeros((rows.len(), 2 * candidates.len()));
    for (r, &i) in rows.iter().enumerate() {
        for (c, enc) in candidates.iter().enumerate() {
            let [s, co] = enc.encode(&ts[i]);
            x[[r, 2 * c]] = s;
            x[[r, 2 * c + 1]] = co;
        }
    }
    let y = Array1::from_iter(rows.iter().map(|&i| ds.values()[[i, t]]));
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dataset(
            "time feature selection needs a cleaned target".into(),
        ));
    }
    let boost = BoostConfig {
        trees: cfg.budget,
        ..BoostConfig::default()
    };
    let imp = gain_importance(x.view(), y.view(), &boost);
    let scores: Vec<(TimeEncoding, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(c, enc)| (*enc, imp[2 * c] + imp[2 * c + 1]))
        .collect();
    let selected = scores
        .iter()
        .filter(|(_, s)| *s >= cfg.threshold)
        .map(|(e, _)| *e)
        .collect();
    Ok(TimeFeatureSelection {
        scores,
        selected,
        skipped,
    })
}

/// Appends `<prefix>_sin` / `<prefix>_cos` columns for each encoding.
pub fn append_time_features(ds: &mut TimeSeriesDataset, encodings: &[TimeEncoding]) -> Result<()> {
    for enc in encodings {
        let enc_values: Vec<[f64; 2]> = ds.timestamps().iter().map(|t| enc.encode(t)).collect();
        let [sin_name, cos_name] = enc.column_names();
        let sin: Vec<f64> = enc_values.iter().map(|v| v[0]).collect();
        let cos: Vec<f64> = enc_values.iter().map(|v| v[1]).collect();
        ds.push_feature(sin_name, &sin)?;
        ds.push_feature(cos_name, &cos)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_minute(n: usize, target: impl Fn(usize, &DateTime<Utc>) -> f64) -> TimeSeriesDataset {
        let start = Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap();
        let interval = Duration::minutes(2);
        let mut values = Array2::zeros((n, 2));
        for i in 0..n {
            let t = start + interval * i as i32;
            values[[i, 0]] = target(i, &t);
            values[[i, 1]] = (i % 7) as f64;
        }
        TimeSeriesDataset::from_grid(
            start,
            interval,
            vec!["y".into(), "x".into()],
            values,
            Array2::zeros((n, 2)),
        )
        .unwrap()
    }

    #[test]
    fn pearson_identical_and_constant() {
        let a = [1.0, 2.0, 4.0, 8.0];
        assert!((pearson(&a, &a) - 1.0).abs() < 1e-15);
        assert!(pearson(&a, &[3.0; 4]).is_nan());
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &neg) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_puts_copy_of_target_first() {
        let mut ds = two_minute(200, |i, _| (i as f64 * 0.1).sin());
        let y = ds.values().column(0).to_vec();
        ds.push_feature("copy", &y).unwrap();
        ds.push_feature("flat", &[1.0; 200]).unwrap();
        let rank = pearson_rank(&ds, "y").unwrap();
        assert_eq!(rank[0].feature, "copy");
        assert!((rank[0].r - 1.0).abs() < 1e-12);
        assert_eq!(rank.last().unwrap().feature, "flat");
        assert!(rank.last().unwrap().zero_variance);
        assert_eq!(rank.last().unwrap().r, 0.0);
    }

    #[test]
    fn pearson_is_symmetric_and_noise_is_weak() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(pearson(&a, &b), pearson(&b, &a));
        // sampling std of r is 1/sqrt(n) = 0.01
        assert!(pearson(&a, &b).abs() < 0.1);
    }

    #[test]
    fn coupled_plant_channels_outrank_auxiliary_ones() {
        use crate::data::{clean, CleanPolicy};
        use crate::plant::{
            generate_dataset, GenerateConfig, AMMONIA, NITRATE, PH, PHOSPHATE, TURBIDITY,
        };
        let raw = generate_dataset(&GenerateConfig::realistic(20_000, 2)).unwrap();
        let policy = CleanPolicy {
            trim_leading: true,
            ..CleanPolicy::default()
        };
        let (ds, _) = clean(&raw, &policy).unwrap();
        let rank = pearson_rank(&ds, PHOSPHATE).unwrap();
        let pos = |f: &str| rank.iter().position(|c| c.feature == f).unwrap();
        for coupled in [NITRATE, AMMONIA] {
            for aux in [PH, TURBIDITY] {
                assert!(pos(coupled) < pos(aux), "{rank:?}");
            }
        }
    }

    #[test]
    fn hour_of_day_target_selects_hour_only() {
        // 20 days so all three cycles but month are eligible
        let n = 20 * 720;
        let ds = two_minute(n, |_, t| {
            (TAU * TimeEncoding::HourOfDay.phase(t)).sin() * 2.0 + 1.0
        });
        let sel = select_time_features(&ds, "y", &TimeFeatureConfig::default()).unwrap();
        assert_eq!(sel.selected, vec![TimeEncoding::HourOfDay]);
        assert_eq!(sel.skipped, vec![TimeEncoding::MonthOfYear]);
    }

    #[test]
    fn noise_target_selects_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..20 * 720).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = two_minute(noise.len(), |i, _| noise[i]);
        let sel = select_time_features(&ds, "y", &TimeFeatureConfig::default()).unwrap();
        assert!(sel.selected.is_empty(), "{:?}", sel.scores);
    }

    #[test]
    fn zero_budget_and_short_span() {
        let ds = two_minute(100, |i, _| i as f64);
        let cfg = TimeFeatureConfig {
            budget: 0,
            ..TimeFeatureConfig::default()
        };
        assert!(select_time_features(&ds, "y", &cfg).is_err());
        let sel = select_time_features(&ds, "y", &TimeFeatureConfig::default()).unwrap();
        assert_eq!(sel.skipped.len(), 3);
        assert!(sel.selected.is_empty());
    }

    #[test]
    fn appended_columns() {
        let mut ds = two_minute(10, |i, _| i as f64);
        append_time_features(&mut ds, &[TimeEncoding::HourOfDay]).unwrap();
        assert_eq!(ds.features()[2], "hour_sin");
        assert_eq!(ds.features()[3], "hour_cos");
        assert!((ds.values()[[0, 3]] - 1.0).abs() < 1e-15);
    }
}
