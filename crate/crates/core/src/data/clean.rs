use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{TimeSeriesDataset, QUALITY_BAD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BadSamplePolicy {
    HoldLast,
    LinearInterpolate,
    DropRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    ClipZero,
    MarkBad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanPolicy {
    pub bad: BadSamplePolicy,
    pub negative: NegativePolicy,
    /// Runs of bad samples longer than this are removed as whole rows,
    /// whatever `bad` says.
    pub max_gap: Option<usize>,
    /// Drop leading rows until every feature has a good sample, instead of
    /// failing under hold-last.
    pub trim_leading: bool,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        CleanPolicy {
            bad: BadSamplePolicy::HoldLast,
            negative: NegativePolicy::ClipZero,
            max_gap: Some(30),
            trim_leading: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairCause {
    BadQuality,
    Missing,
    Negative,
    LongGap,
    Leading,
}

impl RepairCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            RepairCause::BadQuality => "bad_quality",
            RepairCause::Missing => "missing",
            RepairCause::Negative => "negative",
            RepairCause::LongGap => "long_gap",
            RepairCause::Leading => "leading",
        }
    }
}

/// Count of repaired samples per (feature, cause).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepairLog {
    pub counts: BTreeMap<(String, RepairCause), usize>,
}

impl RepairLog {
    fn bump(&mut self, feature: &str, cause: RepairCause) {
        *self.counts.entry((feature.to_string(), cause)).or_default() += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, feature: &str, cause: RepairCause) -> usize {
        self.counts
            .get(&(feature.to_string(), cause))
            .copied()
            .unwrap_or(0)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("feature,cause,count\n");
        for ((f, c), n) in &self.counts {
            s.push_str(&format!("{f},{},{n}\n", c.as_str()));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn is_bad(v: f64, q: u8) -> bool {
    q == QUALITY_BAD || !v.is_finite()
}

/// Repairs bad-quality, missing and negative samples.
///
/// Quality flags are left as recorded; the returned dataset has finite
/// values everywhere and the log says what was changed.
pub fn clean(
    ds: &TimeSeriesDataset,
    policy: &CleanPolicy,
) -> Result<(TimeSeriesDataset, RepairLog)> {
    let mut out = ds.clone();
    let mut log = RepairLog::default();
    let features = ds.features().to_vec();
    let (n, m) = (out.len(), out.n_features());

    // negatives
    for j in 0..m {
        for i in 0..n {
            let v = out.values()[[i, j]];
            if v < 0.0 && out.quality()[[i, j]] != QUALITY_BAD {
                log.bump(&features[j], RepairCause::Negative);
                match policy.negative {
                    NegativePolicy::ClipZero => out.values_mut()[[i, j]] = 0.0,
                    NegativePolicy::MarkBad => out.quality_mut()[[i, j]] = QUALITY_BAD,
                }
            }
        }
    }

    let mut keep = vec![true; n];

    if policy.trim_leading {
        let first_all_good =
            (0..n).find(|&i| (0..m).all(|j| !is_bad(out.values()[[i, j]], out.quality()[[i, j]])));
        let cut = first_all_good.unwrap_or(n);
        for k in keep.iter_mut().take(cut) {
            *k = false;
            for f in &features {
                log.bump(f, RepairCause::Leading);
            }
        }
    }

    // long runs of bad samples become row drops
    if let Some(max_gap) = policy.max_gap {
        for j in 0..m {
            let mut i = 0;
            while i < n {
                if keep[i] && is_bad(out.values()[[i, j]], out.quality()[[i, j]]) {
                    let start = i;
                    while i < n && is_bad(out.values()[[i, j]], out.quality()[[i, j]]) {
                        i += 1;
                    }
                    if i - start > max_gap {
                        for k in keep.iter_mut().take(i).skip(start) {
                            if *k {
                                *k = false;
                                log.bump(&features[j], RepairCause::LongGap);
                            }
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }
    }

    for j in 0..m {
        let rows: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        let mut last_good: Option<usize> = None;
        let mut r = 0;
        while r < rows.len() {
            let i = rows[r];
            let (v, q) = (out.values()[[i, j]], out.quality()[[i, j]]);
            if !is_bad(v, q) {
                last_good = Some(i);
                r += 1;
                continue;
            }
            let cause = if q == QUALITY_BAD {
                RepairCause::BadQuality
            } else {
                RepairCause::Missing
            };
            log.bump(&features[j], cause);
            match policy.bad {
                BadSamplePolicy::HoldLast => {
                    let Some(prev) = last_good else {
                        return Err(Error::Dataset(format!(
                            "feature `{}` starts with a bad sample at row {i}; nothing to hold",
                            features[j]
                        )));
                    };
                    let held = out.values()[[prev, j]];
                    out.values_mut()[[i, j]] = held;
                }
                BadSamplePolicy::LinearInterpolate => {
                    let next_good = rows[r + 1..]
                        .iter()
                        .copied()
                        .find(|&k| !is_bad(out.values()[[k, j]], out.quality()[[k, j]]));
                    let value = match (last_good, next_good) {
                        (Some(a), Some(b)) => {
                            let (va, vb) = (out.values()[[a, j]], out.values()[[b, j]]);
                            let t = (i - a) as f64 / (b - a) as f64;
                            va + t * (vb - va)
                        }
                        (Some(a), None) => out.values()[[a, j]],
                        (None, Some(b)) => out.values()[[b, j]],
                        (None, None) => {
                            return Err(Error::Dataset(format!(
                                "feature `{}` has no good samples",
                                features[j]
                            )))
                        }
                    };
                    out.values_mut()[[i, j]] = value;
                }
                BadSamplePolicy::DropRow => keep[i] = false,
            }
            r += 1;
        }
    }

    if keep.iter().any(|k| !k) {
        out.remove_rows(&keep);
    }
    if out.is_empty() {
        return Err(Error::Dataset("cleaning removed every row".into()));
    }
    Ok((out, log))
}
