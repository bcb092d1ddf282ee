use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Chronological holdout: the first `train_fraction` of rows is used for
/// fitting, of which the last `validation_fraction` is held out for
/// validation. The remaining tail is the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.85,
            validation_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }

    /// Row ranges for a series of `n` rows. Each part must hold at least
    /// `window + 1` rows so it yields one window.
    pub fn ranges(&self, n: usize, window: usize) -> Result<SplitRanges> {
        self.validate()?;
        let rest = ((self.train_fraction * n as f64).round() as usize).min(n);
        let n_test = n - rest;
        let n_val = ((self.validation_fraction * rest as f64).round() as usize).min(rest);
        let n_train = rest - n_val;
        for (what, len) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
            if len < window + 1 {
                return Err(Error::TooShort {
                    what: format!("{what} split"),
                    required: window + 1,
                    actual: len,
                });
            }
        }
        Ok(SplitRanges {
            train: 0..n_train,
            validation: n_train..n_train + n_val,
            test: n_train + n_val..n,
        })
    }

    pub fn split(
        &self,
        ds: &TimeSeriesDataset,
        window: usize,
    ) -> Result<(TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset)> {
        let r = self.ranges(ds.len(), window)?;
        Ok((
            ds.slice_rows(r.train),
            ds.slice_rows(r.validation),
            ds.slice_rows(r.test),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_thousand_rows() {
        let r = SplitSpec::default().ranges(10_000, 240).unwrap();
        assert_eq!(r.train, 0..7225);
        assert_eq!(r.validation, 7225..8500);
        assert_eq!(r.test, 8500..10_000);
    }

    #[test]
    fn too_short_is_reported() {
        let err = SplitSpec::default().ranges(1000, 240).unwrap_err();
        assert!(matches!(err, Error::TooShort { .. }), "{err}");
    }

    #[test]
    fn no_window_crosses_a_boundary_exhaustive() {
        use crate::data::make_windows;
        use ndarray::Array2;
        let n = 500;
        let rows = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        for l in [1usize, 5, 20, 60] {
            let r = SplitSpec::default().ranges(n, l).unwrap();
            for part in [r.train.clone(), r.validation.clone(), r.test.clone()] {
                let view = rows.slice(ndarray::s![part.clone(), ..]);
                let w = make_windows(view, l).unwrap();
                assert_eq!(w.len(), part.len() - l);
                for s in w.iter() {
                    for v in s.input.iter().chain(s.target.iter()) {
                        let idx = *v as usize;
                        assert!(part.contains(&idx), "row {idx} outside {part:?}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn parts_are_disjoint_ordered_and_cover(n in 100usize..50_000, window in 1usize..10) {
            let spec = SplitSpec::default();
            if let Ok(r) = spec.ranges(n, window) {
                prop_assert_eq!(r.train.start, 0);
                prop_assert_eq!(r.train.end, r.validation.start);
                prop_assert_eq!(r.validation.end, r.test.start);
                prop_assert_eq!(r.test.end, n);
                prop_assert!(r.train.len() > window);
            }
        }
    }
}
