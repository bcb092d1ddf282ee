//! Five-point central finite-difference gradient check, used as an independent oracle
//! for the analytic gradients produced by [`super::Tape::backward`].

use super::params::{Grads, ParamSet};

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl TensorCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares `analytic` against central differences of `loss` for every
/// parameter tensor. At most `max_per_tensor` entries are probed per tensor
/// (evenly strided).
///
/// Each entry is differenced at `step` and `step / 10`, keeping the closer
/// estimate: a kink (a switch of a top-k selection) inside the wide stencil
/// and roundoff in the narrow one rarely hit the same entry, while a wrong
/// analytic gradient disagrees with both.
///
/// The relative error of one entry is `|a − n| / max(|a| + |n|, floor)`;
/// the floor keeps entries whose true gradient is zero from dominating.
pub fn check_gradients<F>(
    params: &ParamSet,
    analytic: &Grads,
    mut loss: F,
    step: f64,
    max_per_tensor: usize,
) -> Vec<TensorCheck>
where
    F: FnMut(&ParamSet) -> f64,
{
    const FLOOR: f64 = 1e-7;
    let mut work = params.clone();
    let mut out = Vec::new();
    for (id, g) in params.ids().zip(analytic.iter()) {
        let len = g.len();
        let stride = (len / max_per_tensor.max(1)).max(1);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for flat in (0..len).step_by(stride) {
            let (r, c) = (flat / g.ncols(), flat % g.ncols());
            let orig = work.tensor(id)[[r, c]];
            let a = g[[r, c]];
            let mut rel = f64::INFINITY;
            for h in [step, step / 10.0] {
                let mut at = |k: f64| {
                    work.tensor_mut(id)[[r, c]] = orig + k * h;
                    loss(&work)
                };
                let (p1, m1, p2, m2) = (at(1.0), at(-1.0), at(2.0), at(-2.0));
                let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
                rel = rel.min((a - numeric).abs() / (a.abs() + numeric.abs()).max(FLOOR));
            }
            work.tensor_mut(id)[[r, c]] = orig;
            worst = worst.max(rel);
            checked += 1;
        }
        out.push(TensorCheck {
            name: params.name(id).to_string(),
            max_rel_error: worst,
            checked,
        });
    }
    out
}
