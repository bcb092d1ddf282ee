use ndarray::{Array1, Array2, ArrayView2};

use super::layers::ConstCache;
use super::spec::LinearConfig;
use crate::nn::{ParamId, ParamSet, Tape, Var};

/// Temporal weights, `l x n` (one column per channel) or `l x 1` (shared).
#[derive(Debug, Clone)]
struct TemporalMap {
    w: ParamId,
    b: ParamId,
    individual: bool,
}

impl TemporalMap {
    fn new(ps: &mut ParamSet, name: &str, l: usize, n: usize, individual: bool, init: f64) -> Self {
        let cols = if individual { n } else { 1 };
        TemporalMap {
            w: ps.add(format!("{name}.w"), Array2::from_elem((l, cols), init)),
            b: ps.add_zeros(format!("{name}.b"), 1, n),
            individual,
        }
    }

    /// `1 x n`: per channel `Σ_t W[t] x[t] + b`.
    fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = if self.individual {
            let p = tape.mul(x, w);
            tape.sum_rows(p)
        } else {
            let wt = tape.transpose(w);
            tape.matmul(wt, x)
        };
        let b = tape.param(self.b);
        tape.add(y, b)
    }

    fn apply_no_bias(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        if self.individual {
            let p = tape.mul(x, w);
            tape.sum_rows(p)
        } else {
            let wt = tape.transpose(w);
            tape.matmul(wt, x)
        }
    }
}

/// Trend and remainder of the window, each through its own linear map,
/// summed.
#[derive(Debug, Clone)]
pub(crate) struct DLinear {
    trend: TemporalMap,
    seasonal: TemporalMap,
    kernel: usize,
    cache: ConstCache,
}

impl DLinear {
    pub fn new(ps: &mut ParamSet, cfg: &LinearConfig, l: usize, n: usize) -> Self {
        let init = 1.0 / l as f64;
        DLinear {
            trend: TemporalMap::new(ps, "trend", l, n, cfg.individual, init),
            seasonal: TemporalMap::new(ps, "seasonal", l, n, cfg.individual, init),
            kernel: cfg.kernel,
            cache: ConstCache::default(),
        }
    }

    pub fn forward_one(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Var {
        let x = tape.constant_view(window);
        let a = self.cache.moving_average(window.nrows(), self.kernel);
        let trend = tape.left_const(a, x);
        let seasonal = tape.sub(x, trend);
        let pt = self.trend.apply(tape, trend);
        let ps = self.seasonal.apply(tape, seasonal);
        tape.add(pt, ps)
    }
}

/// `ŷ = W · (x − x_last) + x_last` per channel.
#[derive(Debug, Clone)]
pub(crate) struct NLinear {
    map: TemporalMap,
}

impl NLinear {
    pub fn new(ps: &mut ParamSet, cfg: &LinearConfig, l: usize, n: usize) -> Self {
        NLinear {
            map: TemporalMap::new(ps, "linear", l, n, cfg.individual, 0.0),
        }
    }

    pub fn forward_one(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Var {
        let l = window.nrows();
        let x = tape.constant_view(window);
        let last_rows = tape.rows(x, vec![l - 1; l]);
        let centred = tape.sub(x, last_rows);
        let y = self.map.apply_no_bias(tape, centred);
        let last = tape.row_range(x, l - 1, l);
        tape.add(y, last)
    }
}

/// Plain evaluation of `W · (x − x_last) + x_last` with `W` of shape
/// `l x n`, for checking the tape form.
pub fn nlinear_reference(window: ArrayView2<f64>, w: ArrayView2<f64>) -> Array1<f64> {
    let l = window.nrows();
    let last = window.row(l - 1).to_owned();
    let mut out = last.clone();
    for c in 0..window.ncols() {
        for t in 0..l {
            out[c] += w[[t, c]] * (window[[t, c]] - last[c]);
        }
    }
    out
}
