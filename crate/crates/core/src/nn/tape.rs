//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every forward computation in the forecasters is recorded as a list of
//! nodes; [`Tape::backward`] walks the list in reverse and accumulates
//! parameter gradients. Row vectors are `1 x c` matrices, scalars `1 x 1`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::params::{Grads, ParamId, ParamSet};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Elu(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    Transpose(Var),
    Rows(Var, Vec<usize>),
    Cols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    LeftConst(Arc<Mat>, Var),
    SumRows(Var),
    MeanRows(Var),
    MaxPool(Var, Vec<usize>),
    Dropout(Var, Mat),
    Mse(Var, Mat),
    CircCorr(Var, Var),
    WeightedSum(Vec<Var>, Var),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'p> Tape<'p> {
    /// Inference tape: dropout is the identity.
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            dropout_rng: None,
        }
    }

    /// Training tape: dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamSet, rng: ChaCha8Rng) -> Self {
        Tape {
            dropout_rng: Some(rng),
            ..Tape::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.tensor(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn constant_view(&mut self, m: ArrayView2<f64>) -> Var {
        self.push(m.to_owned(), Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_leaves.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a).view());
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        const EPS: f64 = 1e-5;
        let x = self.value(a);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm(a, inv_std))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut out = Mat::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&src.row(i));
        }
        self.push(out, Op::Rows(a, idx))
    }

    pub fn row_range(&mut self, a: Var, start: usize, end: usize) -> Var {
        self.rows(a, (start..end).collect())
    }

    pub fn cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::Cols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// `c · a` for a constant matrix `c`.
    pub fn left_const(&mut self, c: Arc<Mat>, a: Var) -> Var {
        let out = c.dot(self.value(a));
        self.push(out, Op::LeftConst(c, a))
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(out, Op::SumRows(a))
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = (x.sum_axis(Axis(0)) / x.nrows() as f64).insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// Column-wise max over row groups. `groups[r]` lists the input rows
    /// pooled into output row `r`.
    pub fn max_pool(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let x = self.value(a);
        let cols = x.ncols();
        let mut out = Mat::zeros((groups.len(), cols));
        let mut argmax = vec![0usize; groups.len() * cols];
        for (r, group) in groups.iter().enumerate() {
            for c in 0..cols {
                let mut best = group[0];
                for &i in &group[1..] {
                    if x[[i, c]] > x[[best, c]] {
                        best = i;
                    }
                }
                out[[r, c]] = x[[best, c]];
                argmax[r * cols + c] = best;
            }
        }
        self.push(out, Op::MaxPool(a, argmax))
    }

    /// Inverted dropout. Identity on inference tapes or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 {
            return a;
        }
        let (r, c) = self.value(a).dim();
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        let keep = 1.0 - p;
        let mask = Mat::from_shape_fn((r, c), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let out = self.value(a) * &mask;
        self.push(out, Op::Dropout(a, mask))
    }

    /// Mean squared error against a constant target, as a `1 x 1` node.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), target.dim(), "mse: shape mismatch");
        let n = x.len() as f64;
        let loss = Zip::from(x)
            .and(&target)
            .fold(0.0, |acc, p, t| acc + (p - t).powi(2))
            / n;
        self.push(Mat::from_elem((1, 1), loss), Op::Mse(a, target))
    }

    /// Channel-averaged circular cross-correlation
    /// `R[τ] = (1/d) Σ_c Σ_t q[t,c] · k[(t − τ) mod L, c]`, as a `1 x L` row,
    /// computed through the frequency domain.
    pub fn circular_correlation(&mut self, q: Var, k: Var) -> Var {
        let out = circular_correlation_fft(self.value(q).view(), self.value(k).view());
        self.push(out, Op::CircCorr(q, k))
    }

    /// `Σ_i w[0,i] · mats[i]`.
    pub fn weighted_sum(&mut self, mats: &[Var], w: Var) -> Var {
        let weights = self.value(w);
        assert_eq!(weights.dim(), (1, mats.len()), "weighted_sum: weight shape");
        let mut out = Mat::zeros(self.value(mats[0]).dim());
        for (i, m) in mats.iter().enumerate() {
            out.scaled_add(weights[[0, i]], self.value(*m));
        }
        self.push(out, Op::WeightedSum(mats.to_vec(), w))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be 1x1");
        self.backward_from(loss, Mat::from_elem((1, 1), 1.0))
    }

    /// Vector-Jacobian product seeded with `seed` at `out`.
    pub fn backward_from(&self, out: Var, seed: Mat) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if let Value::Param(id) = node.value {
                grads.accumulate(id, &g);
                continue;
            }
            self.propagate(&node.op, i, g, &mut adj);
        }
        grads
    }

    fn propagate(&self, op: &Op, idx: usize, g: Mat, adj: &mut [Option<Mat>]) {
        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }
        let out_val = || match &self.nodes[idx].value {
            Value::Owned(m) => m,
            Value::Param(_) => unreachable!(),
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.dot(&self.value(*b).t());
                let gb = self.value(*a).t().dot(&g);
                acc(adj, *a, ga);
                acc(adj, *b, gb);
            }
            Op::MatMulT(a, b) => {
                let ga = g.dot(self.value(*b));
                let gb = g.t().dot(self.value(*a));
                acc(adj, *a, ga);
                acc(adj, *b, gb);
            }
            Op::Add(a, b) => {
                acc(adj, *b, g.clone());
                acc(adj, *a, g);
            }
            Op::Sub(a, b) => {
                acc(adj, *b, -&g);
                acc(adj, *a, g);
            }
            Op::Mul(a, b) => {
                let ga = &g * self.value(*b);
                let gb = &g * self.value(*a);
                acc(adj, *a, ga);
                acc(adj, *b, gb);
            }
            Op::AddRow(a, row) => {
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                acc(adj, *row, gr);
                acc(adj, *a, g);
            }
            Op::MulRow(a, row) => {
                let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                let ga = &g * self.value(*row);
                acc(adj, *row, gr);
                acc(adj, *a, ga);
            }
            Op::Scale(a, k) => acc(adj, *a, g * *k),
            Op::Sigmoid(a) => {
                let y = out_val();
                let ga = Zip::from(&g).and(y).map_collect(|g, y| g * y * (1.0 - y));
                acc(adj, *a, ga);
            }
            Op::Tanh(a) => {
                let y = out_val();
                let ga = Zip::from(&g).and(y).map_collect(|g, y| g * (1.0 - y * y));
                acc(adj, *a, ga);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let ga = Zip::from(&g).and(x).map_collect(|g, x| g * gelu_grad(*x));
                acc(adj, *a, ga);
            }
            Op::Elu(a) => {
                let y = out_val();
                let ga =
                    Zip::from(&g)
                        .and(y)
                        .map_collect(|g, y| if *y > 0.0 { *g } else { g * (y + 1.0) });
                acc(adj, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = out_val();
                let mut ga = Mat::zeros(y.dim());
                for ((mut gr, yr), gor) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                    let dot: f64 = yr.iter().zip(gor.iter()).map(|(y, g)| y * g).sum();
                    Zip::from(&mut gr)
                        .and(&yr)
                        .and(&gor)
                        .for_each(|o, y, g| *o = y * (g - dot));
                }
                acc(adj, *a, ga);
            }
            Op::LayerNorm(a, inv_std) => {
                let y = out_val();
                let mut ga = Mat::zeros(y.dim());
                let n = y.ncols() as f64;
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gr.sum() / n;
                    let mean_gy = gr.iter().zip(yr.iter()).map(|(g, y)| g * y).sum::<f64>() / n;
                    Zip::from(ga.row_mut(r))
                        .and(&gr)
                        .and(&yr)
                        .for_each(|o, g, y| *o = is * (g - mean_g - y * mean_gy));
                }
                acc(adj, *a, ga);
            }
            Op::Transpose(a) => acc(adj, *a, g.t().to_owned()),
            Op::Rows(a, idx) => {
                let mut ga = Mat::zeros(self.value(*a).dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut dst = ga.row_mut(i);
                    dst += &g.row(r);
                }
                acc(adj, *a, ga);
            }
            Op::Cols(a, start) => {
                let mut ga = Mat::zeros(self.value(*a).dim());
                ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                acc(adj, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).nrows();
                    acc(adj, *p, g.slice(s![offset..offset + rows, ..]).to_owned());
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).ncols();
                    acc(adj, *p, g.slice(s![.., offset..offset + cols]).to_owned());
                    offset += cols;
                }
            }
            Op::LeftConst(c, a) => acc(adj, *a, c.t().dot(&g)),
            Op::SumRows(a) => {
                let rows = self.value(*a).nrows();
                let ga = g.broadcast((rows, g.ncols())).unwrap().to_owned();
                acc(adj, *a, ga);
            }
            Op::MeanRows(a) => {
                let rows = self.value(*a).nrows();
                let ga = g.broadcast((rows, g.ncols())).unwrap().to_owned() / rows as f64;
                acc(adj, *a, ga);
            }
            Op::MaxPool(a, argmax) => {
                let cols = g.ncols();
                let mut ga = Mat::zeros(self.value(*a).dim());
                for r in 0..g.nrows() {
                    for c in 0..cols {
                        ga[[argmax[r * cols + c], c]] += g[[r, c]];
                    }
                }
                acc(adj, *a, ga);
            }
            Op::Dropout(a, mask) => acc(adj, *a, g * mask),
            Op::Mse(a, target) => {
                let x = self.value(*a);
                let k = 2.0 * g[[0, 0]] / x.len() as f64;
                let ga = Zip::from(x).and(target).map_collect(|p, t| k * (p - t));
                acc(adj, *a, ga);
            }
            Op::CircCorr(q, k) => {
                let (gq, gk) = circular_correlation_grad(
                    self.value(*q).view(),
                    self.value(*k).view(),
                    g.row(0).as_slice().expect("contiguous row"),
                );
                acc(adj, *q, gq);
                acc(adj, *k, gk);
            }
            Op::WeightedSum(mats, w) => {
                let weights = self.value(*w);
                let mut gw = Mat::zeros((1, mats.len()));
                for (i, m) in mats.iter().enumerate() {
                    gw[[0, i]] = (&g * self.value(*m)).sum();
                    acc(adj, *m, &g * weights[[0, i]]);
                }
                acc(adj, *w, gw);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: ArrayView2<f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

thread_local! {
    static FFT_PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_pair(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    FFT_PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(len), p.plan_fft_inverse(len))
    })
}

/// `R[τ] = (1/d) Σ_c Σ_t q[t,c] · k[(t − τ) mod L, c]` via the
/// Wiener–Khinchin identity `IFFT(FFT(q) · conj(FFT(k)))`.
pub fn circular_correlation_fft(q: ArrayView2<f64>, k: ArrayView2<f64>) -> Mat {
    let (len, d) = q.dim();
    assert_eq!(
        k.dim(),
        (len, d),
        "circular_correlation: q/k shape mismatch"
    );
    let (fwd, inv) = fft_pair(len);
    let mut acc = vec![0.0; len];
    let mut qb = vec![Complex::new(0.0, 0.0); len];
    let mut kb = vec![Complex::new(0.0, 0.0); len];
    for c in 0..d {
        for t in 0..len {
            qb[t] = Complex::new(q[[t, c]], 0.0);
            kb[t] = Complex::new(k[[t, c]], 0.0);
        }
        fwd.process(&mut qb);
        fwd.process(&mut kb);
        for (a, b) in qb.iter_mut().zip(kb.iter()) {
            *a *= b.conj();
        }
        inv.process(&mut qb);
        for (slot, v) in acc.iter_mut().zip(qb.iter()) {
            *slot += v.re;
        }
    }
    let norm = 1.0 / (len as f64 * d as f64);
    Mat::from_shape_fn((1, len), |(_, t)| acc[t] * norm)
}

fn circular_correlation_grad(q: ArrayView2<f64>, k: ArrayView2<f64>, g: &[f64]) -> (Mat, Mat) {
    let (len, d) = q.dim();
    let inv_d = 1.0 / d as f64;
    let mut gq = Mat::zeros((len, d));
    let mut gk = Mat::zeros((len, d));
    for (tau, &gt) in g.iter().enumerate() {
        if gt == 0.0 {
            continue;
        }
        let w = gt * inv_d;
        for t in 0..len {
            let s = (t + len - tau) % len;
            let (qr, kr) = (q.row(t), k.row(s));
            let mut gqr = gq.row_mut(t);
            gqr.scaled_add(w, &kr);
            let mut gkr = gk.row_mut(s);
            gkr.scaled_add(w, &qr);
        }
    }
    (gq, gk)
}
