use std::ops::Range;

use ndarray::{s, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// One training pair borrowed from the underlying array.
#[derive(Debug, Clone, Copy)]
pub struct WindowedSample<'a> {
    /// `l` consecutive rows.
    pub input: ArrayView2<'a, f64>,
    /// The row `horizon` steps after the last input row.
    pub target: ArrayView1<'a, f64>,
}

/// Sliding windows over a matrix, restricted to contiguous segments.
#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    data: ArrayView2<'a, f64>,
    window: usize,
    horizon: usize,
    starts: Vec<usize>,
}

impl<'a> WindowSet<'a> {
    /// Windows never straddle a segment boundary. Pass `&[0..data.nrows()]`
    /// for a gap-free series.
    pub fn new(
        data: ArrayView2<'a, f64>,
        window: usize,
        horizon: usize,
        segments: &[Range<usize>],
    ) -> Result<Self> {
        if window == 0 || horizon == 0 {
            return Err(Error::config("window length and horizon must be positive"));
        }
        let span = window + horizon - 1;
        let mut starts = Vec::new();
        for seg in segments {
            if seg.end > data.nrows() {
                return Err(Error::shape(format!(
                    "segment {seg:?} exceeds {} rows",
                    data.nrows()
                )));
            }
            if seg.len() > span {
                starts.extend(seg.start..seg.end - span);
            }
        }
        if starts.is_empty() {
            return Err(Error::TooShort {
                what: "series for windowing".into(),
                required: span + 1,
                actual: segments.iter().map(|s| s.len()).max().unwrap_or(0),
            });
        }
        Ok(WindowSet {
            data,
            window,
            horizon,
            starts,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'a, f64> {
        self.data
    }

    /// Row index of the first input row of sample `i`.
    pub fn start(&self, i: usize) -> usize {
        self.starts[i]
    }

    pub fn get(&self, i: usize) -> WindowedSample<'a> {
        let p = self.starts[i];
        WindowedSample {
            input: self.data.slice_move(s![p..p + self.window, ..]),
            target: self
                .data
                .index_axis_move(Axis(0), p + self.window + self.horizon - 1),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowedSample<'a>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// Windows of length `l` with one-step-ahead targets over a gap-free matrix.
pub fn make_windows(data: ArrayView2<'_, f64>, l: usize) -> Result<WindowSet<'_>> {
    let n = data.nrows();
    WindowSet::new(data, l, 1, &[0..n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn windows_borrow_the_source() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * 10 + j) as f64);
        let w = make_windows(x.view(), 3).unwrap();
        assert_eq!(w.len(), 7);
        let s = w.get(2);
        assert_eq!(s.input.as_ptr(), x.row(2).as_ptr());
        assert_eq!(s.target[0], 50.0);
    }

    #[test]
    fn windows_do_not_cross_gaps() {
        let x = Array2::zeros((12, 1));
        let w = WindowSet::new(x.view(), 3, 1, &[0..5, 5..12]).unwrap();
        assert_eq!(w.len(), 2 + 4);
        assert!(w.iter().count() == 6);
        assert!((0..w.len()).all(|i| w.start(i) + 3 < 5 || w.start(i) >= 5));
    }

    #[test]
    fn too_short_series() {
        let x = Array2::zeros((3, 1));
        assert!(matches!(
            make_windows(x.view(), 3),
            Err(Error::TooShort { .. })
        ));
    }

    proptest! {
        #[test]
        fn count_and_alignment(n in 2usize..200, l in 1usize..50) {
            let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
            match make_windows(x.view(), l) {
                Ok(w) => {
                    prop_assert_eq!(w.len(), n - l);
                    for (i, s) in w.iter().enumerate() {
                        prop_assert_eq!(s.input[[0, 0]], i as f64);
                        prop_assert_eq!(s.target[0], (i + l) as f64);
                    }
                }
                Err(_) => prop_assert!(n <= l),
            }
        }
    }
}
