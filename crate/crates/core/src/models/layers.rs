use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::nn::{Mat, ParamId, ParamSet, Tape, Var};

/// Dense layer `x · W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.add_xavier(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| ps.add_zeros(format!("{name}.b"), 1, fan_out));
        Linear { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(ps, &format!("{name}.up"), d, d_ff, true, rng),
            down: Linear::new(ps, &format!("{name}.down"), d_ff, d, true, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, dropout: f64) -> Var {
        let h = self.up.apply(tape, x);
        let h = tape.gelu(h);
        let h = tape.dropout(h, dropout);
        self.down.apply(tape, h)
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(..)`, for
/// positions `offset..offset + len`.
pub fn sinusoidal_encoding(len: usize, d: usize, offset: usize) -> Mat {
    Array2::from_shape_fn((len, d), |(p, j)| {
        let pos = (p + offset) as f64;
        let freq = 10_000f64.powf(-((j - j % 2) as f64) / d as f64);
        if j % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

/// Row-averaging matrix of a centered moving average whose edges are padded
/// by repeating the first and last rows.
pub fn moving_average_matrix(len: usize, kernel: usize) -> Mat {
    let half = kernel / 2;
    let mut a = Mat::zeros((len, len));
    let w = 1.0 / kernel as f64;
    for i in 0..len {
        for j in 0..kernel {
            let src = (i + j).saturating_sub(half).min(len - 1);
            a[[i, src]] += w;
        }
    }
    a
}

/// Constant matrices shared by every forward pass of one model.
#[derive(Debug, Default)]
pub(crate) struct ConstCache {
    entries: std::sync::Mutex<Vec<((u8, usize, usize, usize), Arc<Mat>)>>,
}

impl Clone for ConstCache {
    fn clone(&self) -> Self {
        ConstCache::default()
    }
}

impl ConstCache {
    pub fn get(&self, key: (u8, usize, usize, usize), build: impl FnOnce() -> Mat) -> Arc<Mat> {
        let mut entries = self.entries.lock().expect("cache lock");
        if let Some((_, m)) = entries.iter().find(|(k, _)| *k == key) {
            return m.clone();
        }
        let m = Arc::new(build());
        entries.push((key, m.clone()));
        m
    }

    pub fn moving_average(&self, len: usize, kernel: usize) -> Arc<Mat> {
        self.get((0, len, kernel, 0), || moving_average_matrix(len, kernel))
    }

    pub fn positional(&self, len: usize, d: usize, offset: usize) -> Arc<Mat> {
        self.get((1, len, d, offset), || sinusoidal_encoding(len, d, offset))
    }

    /// Additive causal mask: 0 on and below the diagonal, a large negative
    /// number above it.
    pub fn causal_mask(&self, len: usize) -> Arc<Mat> {
        self.get((2, len, 0, 0), || {
            Array2::from_shape_fn((len, len), |(i, j)| if j > i { -1e30 } else { 0.0 })
        })
    }
}
