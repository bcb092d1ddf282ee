use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::Linear;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Mat, ParamSet, Tape, Var};

/// `softmax(Q Kᵀ / √d_k) V`, returning the output and the weight matrix.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let d_k = q.ncols();
    if d_k == 0 {
        return Err(Error::shape("attention needs d_k > 0"));
    }
    if k.ncols() != d_k || v.nrows() != k.nrows() || k.nrows() == 0 {
        return Err(Error::shape(format!(
            "attention shapes Q {:?}, K {:?}, V {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let scores = q.dot(&k.t()) / (d_k as f64).sqrt();
    let w = softmax_rows(scores.view());
    Ok((w.dot(&v), w))
}

/// Query sparsity `M(q_i) = max_j s_ij − mean_j s_ij` with
/// `s_ij = q_i · k_j / √d_k`.
pub fn sparsity_scores(q: ArrayView2<f64>, k: ArrayView2<f64>) -> Vec<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let s = q.dot(&k.t()) * scale;
    s.rows()
        .into_iter()
        .map(|r| {
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max - r.mean().unwrap_or(0.0)
        })
        .collect()
}

/// `u = ⌈c · ln L_Q⌉`, at least one and at most `L_Q`.
pub fn active_query_count(l_q: usize, factor: f64) -> usize {
    let u = (factor * (l_q as f64).ln()).ceil();
    if u.is_finite() && u >= 1.0 {
        (u as usize).min(l_q)
    } else {
        1.min(l_q)
    }
}

/// Indices of the `u` queries with the largest sparsity score, ties to the
/// lower index.
pub fn select_active_queries(scores: &[f64], u: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(u);
    idx
}

/// ProbSparse attention: selected queries get full attention rows, every
/// other row is the mean of `V`. Returns the output and the selected rows.
pub fn probsparse_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    factor: f64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if q.nrows() == 0 {
        return Err(Error::shape(
            "probsparse attention needs at least one query",
        ));
    }
    let u = active_query_count(q.nrows(), factor);
    let selected = select_active_queries(&sparsity_scores(q, k), u);
    let q_sel = q.select(Axis(0), &selected);
    let (dense, _) = attention(q_sel.view(), k, v)?;
    let mean_v = v.mean_axis(Axis(0)).expect("non-empty");
    let mut out = Array2::zeros((q.nrows(), v.ncols()));
    for mut row in out.rows_mut() {
        row.assign(&mean_v);
    }
    for (r, &i) in selected.iter().enumerate() {
        out.row_mut(i).assign(&dense.row(r));
    }
    Ok((out, selected))
}

/// Scaled dot-product attention on the tape, with an optional additive mask.
pub(crate) fn attention_var(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Arc<Mat>>,
) -> Var {
    let d_k = tape.shape(q).1;
    let s = tape.matmul_t(q, k);
    let mut s = tape.scale(s, 1.0 / (d_k as f64).sqrt());
    if let Some(m) = mask {
        let m = tape.constant((**m).clone());
        s = tape.add(s, m);
    }
    let w = tape.softmax_rows(s);
    tape.matmul(w, v)
}

pub(crate) fn probsparse_var(tape: &mut Tape, q: Var, k: Var, v: Var, factor: f64) -> Var {
    let l_q = tape.shape(q).0;
    let u = active_query_count(l_q, factor);
    if u == l_q {
        return attention_var(tape, q, k, v, None);
    }
    let scores = sparsity_scores(tape.value(q).view(), tape.value(k).view());
    let selected = select_active_queries(&scores, u);
    let mut slot = vec![u; l_q];
    for (r, &i) in selected.iter().enumerate() {
        slot[i] = r;
    }
    let q_sel = tape.rows(q, selected);
    let dense = attention_var(tape, q_sel, k, v, None);
    let mean_v = tape.mean_rows(v);
    let stacked = tape.concat_rows(&[dense, mean_v]);
    tape.rows(stacked, slot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum AttnKind {
    Dense,
    Causal,
    ProbSparse(f64),
}

/// Multi-head attention with separate Q/K/V projections and an output
/// projection.
#[derive(Debug, Clone)]
pub(crate) struct MultiHead {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    d_model: usize,
}

impl MultiHead {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(
            heads > 0 && d_model % heads == 0,
            "d_model must divide into heads"
        );
        MultiHead {
            q: Linear::new(ps, &format!("{name}.q"), d_model, d_model, true, rng),
            k: Linear::new(ps, &format!("{name}.k"), d_model, d_model, true, rng),
            v: Linear::new(ps, &format!("{name}.v"), d_model, d_model, true, rng),
            o: Linear::new(ps, &format!("{name}.o"), d_model, d_model, true, rng),
            heads,
            d_model,
        }
    }

    pub fn project(&self, tape: &mut Tape, query: Var, memory: Var) -> (Var, Var, Var) {
        (
            self.q.apply(tape, query),
            self.k.apply(tape, memory),
            self.v.apply(tape, memory),
        )
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn output(&self, tape: &mut Tape, per_head: &[Var]) -> Var {
        let cat = if per_head.len() == 1 {
            per_head[0]
        } else {
            tape.concat_cols(per_head)
        };
        self.o.apply(tape, cat)
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        query: Var,
        memory: Var,
        kind: AttnKind,
        causal: Option<&Arc<Mat>>,
    ) -> Var {
        let (q, k, v) = self.project(tape, query, memory);
        let dh = self.head_dim();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.cols(q, h * dh, (h + 1) * dh);
            let kh = tape.cols(k, h * dh, (h + 1) * dh);
            let vh = tape.cols(v, h * dh, (h + 1) * dh);
            let o = match kind {
                AttnKind::Dense => attention_var(tape, qh, kh, vh, None),
                AttnKind::Causal => attention_var(tape, qh, kh, vh, causal),
                AttnKind::ProbSparse(c) => probsparse_var(tape, qh, kh, vh, c),
            };
            outs.push(o);
        }
        self.output(tape, &outs)
    }
}
