use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::layers::Linear;
use super::spec::{CellActivation, LstmConfig};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, ParamId, ParamSet, Tape, Var};

/// Weights of one LSTM layer, one matrix per gate. Inputs multiply from the
/// left: `x · W` with `W` of shape `in x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellWeights {
    pub w_f: Array2<f64>,
    pub w_i: Array2<f64>,
    pub w_o: Array2<f64>,
    pub w_c: Array2<f64>,
    pub u_f: Array2<f64>,
    pub u_i: Array2<f64>,
    pub u_o: Array2<f64>,
    pub u_c: Array2<f64>,
    pub b_f: Array1<f64>,
    pub b_i: Array1<f64>,
    pub b_o: Array1<f64>,
    pub b_c: Array1<f64>,
}

impl LstmCellWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Array2::zeros((input, hidden));
        let u = || Array2::zeros((hidden, hidden));
        let b = || Array1::zeros(hidden);
        LstmCellWeights {
            w_f: w(),
            w_i: w(),
            w_o: w(),
            w_c: w(),
            u_f: u(),
            u_i: u(),
            u_o: u(),
            u_c: u(),
            b_f: b(),
            b_i: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_f.len()
    }
}

/// Stacked LSTM layers followed by the dense head `h · W_x + b_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub layers: Vec<LstmCellWeights>,
    pub w_x: Array2<f64>,
    pub b_x: Array1<f64>,
    pub candidate: CellActivation,
}

fn squash(a: CellActivation, x: f64) -> f64 {
    match a {
        CellActivation::Tanh => x.tanh(),
        CellActivation::Sigmoid => sigmoid(x),
    }
}

/// One cell update: sigmoid gates, `c = f ⊙ c_prev + i ⊙ c̃`, `h = o ⊙ tanh(c)`.
pub fn lstm_cell_step(
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    c_prev: ArrayView1<f64>,
    w: &LstmCellWeights,
    candidate: CellActivation,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let hidden = w.hidden();
    if x.len() != w.w_f.nrows() || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::shape(format!(
            "lstm cell expects input {} and state {hidden}, got {} / {} / {}",
            w.w_f.nrows(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let pre = |wm: &Array2<f64>, um: &Array2<f64>, b: &Array1<f64>| x.dot(wm) + h_prev.dot(um) + b;
    let f = pre(&w.w_f, &w.u_f, &w.b_f).mapv(sigmoid);
    let i = pre(&w.w_i, &w.u_i, &w.b_i).mapv(sigmoid);
    let o = pre(&w.w_o, &w.u_o, &w.b_o).mapv(sigmoid);
    let c_tilde = pre(&w.w_c, &w.u_c, &w.b_c).mapv(|v| squash(candidate, v));
    let c = &f * &c_prev + &i * &c_tilde;
    let h = &o * &c.mapv(f64::tanh);
    Ok((h, c))
}

/// Runs the stack over every row of `window` and applies the head to the
/// final hidden state of the top layer.
pub fn lstm_forward(window: ArrayView2<f64>, w: &LstmWeights) -> Result<Array1<f64>> {
    let mut input: Array2<f64> = window.to_owned();
    let mut last_h = Array1::zeros(0);
    for (k, layer) in w.layers.iter().enumerate() {
        let hidden = layer.hidden();
        let mut h = Array1::zeros(hidden);
        let mut c = Array1::zeros(hidden);
        let mut outputs = Array2::zeros((input.nrows(), hidden));
        for t in 0..input.nrows() {
            let (h2, c2) = lstm_cell_step(input.row(t), h.view(), c.view(), layer, w.candidate)?;
            if c2.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("lstm layer {k} step {t}"),
                });
            }
            outputs.row_mut(t).assign(&h2);
            h = h2;
            c = c2;
        }
        last_h = h;
        input = outputs;
    }
    Ok(last_h.dot(&w.w_x) + &w.b_x)
}

#[derive(Debug, Clone)]
struct LayerParams {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

/// Tape form of the stacked LSTM. Gate blocks are fused column-wise in the
/// order f, i, o, c̃.
#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    layers: Vec<LayerParams>,
    head: Linear,
    hidden: usize,
    candidate: CellActivation,
    dropout: f64,
}

impl Lstm {
    pub fn new(ps: &mut ParamSet, cfg: &LstmConfig, n: usize, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let mut layers = Vec::new();
        for k in 0..cfg.layers {
            let input = if k == 0 { n } else { h };
            let w = ps.add_xavier(format!("lstm{k}.w"), input, 4 * h, rng);
            let u = ps.add_xavier(format!("lstm{k}.u"), h, 4 * h, rng);
            let mut bias = Array2::zeros((1, 4 * h));
            bias.slice_mut(s![.., 0..h]).fill(1.0);
            let b = ps.add(format!("lstm{k}.b"), bias);
            layers.push(LayerParams { w, u, b });
        }
        let head = Linear::new(ps, "head", h, n, true, rng);
        Lstm {
            layers,
            head,
            hidden: h,
            candidate: cfg.candidate,
            dropout: cfg.dropout,
        }
    }

    /// `windows` share one shape `l x n`; the batch runs as `B x n` rows.
    pub fn forward(&self, tape: &mut Tape, windows: &[ArrayView2<f64>]) -> Result<Var> {
        let batch = windows.len();
        let (l, n) = windows[0].dim();
        let h_dim = self.hidden;
        let mut inputs: Vec<Var> = (0..l)
            .map(|t| {
                let mut x = Array2::zeros((batch, n));
                for (b, w) in windows.iter().enumerate() {
                    x.row_mut(b).assign(&w.row(t));
                }
                tape.constant(x)
            })
            .collect();
        let mut h = tape.constant(Array2::zeros((batch, h_dim)));
        for (k, layer) in self.layers.iter().enumerate() {
            let (w, u, b) = (
                tape.param(layer.w),
                tape.param(layer.u),
                tape.param(layer.b),
            );
            h = tape.constant(Array2::zeros((batch, h_dim)));
            let mut c = tape.constant(Array2::zeros((batch, h_dim)));
            let mut outputs = Vec::with_capacity(l);
            for (t, x) in inputs.iter().enumerate() {
                let xw = tape.matmul(*x, w);
                let hu = tape.matmul(h, u);
                let z = tape.add(xw, hu);
                let z = tape.add_row(z, b);
                let f = tape.cols(z, 0, h_dim);
                let f = tape.sigmoid(f);
                let i = tape.cols(z, h_dim, 2 * h_dim);
                let i = tape.sigmoid(i);
                let o = tape.cols(z, 2 * h_dim, 3 * h_dim);
                let o = tape.sigmoid(o);
                let g = tape.cols(z, 3 * h_dim, 4 * h_dim);
                let g = match self.candidate {
                    CellActivation::Tanh => tape.tanh(g),
                    CellActivation::Sigmoid => tape.sigmoid(g),
                };
                let fc = tape.mul(f, c);
                let ig = tape.mul(i, g);
                c = tape.add(fc, ig);
                if tape.value(c).iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("lstm layer {k} step {t}"),
                    });
                }
                let tc = tape.tanh(c);
                h = tape.mul(o, tc);
                if k + 1 < self.layers.len() {
                    outputs.push(tape.dropout(h, self.dropout));
                }
            }
            if k + 1 < self.layers.len() {
                inputs = outputs;
            }
        }
        let h = tape.dropout(h, self.dropout);
        Ok(self.head.apply(tape, h))
    }

    /// Splits the fused tensors into per-gate matrices.
    pub fn weights(&self, ps: &ParamSet) -> LstmWeights {
        let h = self.hidden;
        let layers = self
            .layers
            .iter()
            .map(|lp| {
                let (w, u, b) = (ps.tensor(lp.w), ps.tensor(lp.u), ps.tensor(lp.b));
                let block =
                    |m: &Array2<f64>, g: usize| m.slice(s![.., g * h..(g + 1) * h]).to_owned();
                let bias = |g: usize| b.slice(s![0, g * h..(g + 1) * h]).to_owned();
                LstmCellWeights {
                    w_f: block(w, 0),
                    w_i: block(w, 1),
                    w_o: block(w, 2),
                    w_c: block(w, 3),
                    u_f: block(u, 0),
                    u_i: block(u, 1),
                    u_o: block(u, 2),
                    u_c: block(u, 3),
                    b_f: bias(0),
                    b_i: bias(1),
                    b_o: bias(2),
                    b_c: bias(3),
                }
            })
            .collect();
        let (w_x, b_x) = self.head_tensors(ps);
        LstmWeights {
            layers,
            w_x,
            b_x,
            candidate: self.candidate,
        }
    }

    fn head_tensors(&self, ps: &ParamSet) -> (Array2<f64>, Array1<f64>) {
        let w = ps.find("head.w").expect("head weight");
        let b = ps.find("head.b").expect("head bias");
        (ps.tensor(w).clone(), ps.tensor(b).row(0).to_owned())
    }
}
