//! Next-step forecasters. Every model maps an `l x n` standardized window
//! to the `1 x n` row that follows it.

pub mod attention;
pub mod decomp;
mod former;
pub mod layers;
mod linear;
pub mod lstm;
mod spec;

use ndarray::{Array2, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use linear::nlinear_reference;
pub use lstm::{lstm_cell_step, lstm_forward, LstmCellWeights, LstmWeights};
pub use spec::{CellActivation, FormerConfig, LinearConfig, LstmConfig, ModelKind, ModelSpec};

use crate::error::{Error, Result};
use crate::nn::{Grads, ParamSet, Tape, Var};

#[derive(Debug, Clone)]
enum Net {
    Lstm(lstm::Lstm),
    Transformer(former::Transformer),
    Informer(former::Informer),
    Autoformer(former::Autoformer),
    DLinear(linear::DLinear),
    NLinear(linear::NLinear),
}

/// A model of one kind with its parameters.
#[derive(Debug, Clone)]
pub struct Forecaster {
    spec: ModelSpec,
    n_features: usize,
    window: usize,
    params: ParamSet,
    net: Net,
}

impl Forecaster {
    /// Builds a model with parameters drawn from `seed`.
    pub fn new(spec: &ModelSpec, n_features: usize, window: usize, seed: u64) -> Result<Self> {
        spec.validate(window)?;
        if n_features == 0 {
            return Err(Error::config("a model needs at least one feature"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let n = n_features;
        let net = match spec {
            ModelSpec::Lstm(c) => Net::Lstm(lstm::Lstm::new(&mut params, c, n, &mut rng)),
            ModelSpec::Transformer(c) => {
                Net::Transformer(former::Transformer::new(&mut params, c, n, &mut rng))
            }
            ModelSpec::Informer(c) => {
                Net::Informer(former::Informer::new(&mut params, c, n, &mut rng))
            }
            ModelSpec::Autoformer(c) => {
                Net::Autoformer(former::Autoformer::new(&mut params, c, n, &mut rng))
            }
            ModelSpec::DLinear(c) => Net::DLinear(linear::DLinear::new(&mut params, c, window, n)),
            ModelSpec::NLinear(c) => Net::NLinear(linear::NLinear::new(&mut params, c, window, n)),
        };
        Ok(Forecaster {
            spec: spec.clone(),
            n_features,
            window,
            params,
            net,
        })
    }

    /// Rebuilds the architecture and installs saved parameters.
    pub fn from_parts(
        spec: &ModelSpec,
        n_features: usize,
        window: usize,
        params: &ParamSet,
    ) -> Result<Self> {
        let mut model = Forecaster::new(spec, n_features, window, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Largest number of windows recorded on one tape. The recurrent and
    /// linear models batch across windows; the attention models are
    /// recorded one window at a time to bound tape memory.
    pub fn micro_batch(&self) -> usize {
        match self.net {
            Net::Lstm(_) | Net::DLinear(_) | Net::NLinear(_) => usize::MAX,
            _ => 1,
        }
    }

    pub fn check_window(&self, w: ArrayView2<f64>) -> Result<()> {
        if w.dim() != (self.window, self.n_features) {
            return Err(Error::shape(format!(
                "expected a {} x {} window, got {} x {}",
                self.window,
                self.n_features,
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "input window".into(),
            });
        }
        Ok(())
    }

    /// Records the forward pass of `windows` on `tape`, whose parameter set
    /// must have this model's layout. Returns a `B x n` node.
    pub fn forward(&self, tape: &mut Tape, windows: &[ArrayView2<f64>]) -> Result<Var> {
        if windows.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        if let Net::Lstm(m) = &self.net {
            return m.forward(tape, windows);
        }
        let mut rows = Vec::with_capacity(windows.len());
        for w in windows {
            let out = match &self.net {
                Net::Transformer(m) => m.forward_one(tape, *w),
                Net::Informer(m) => m.forward_one(tape, *w)?,
                Net::Autoformer(m) => m.forward_one(tape, *w),
                Net::DLinear(m) => m.forward_one(tape, *w),
                Net::NLinear(m) => m.forward_one(tape, *w),
                Net::Lstm(_) => unreachable!(),
            };
            rows.push(out);
        }
        Ok(if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat_rows(&rows)
        })
    }

    /// Predictions for a batch of windows, one row each.
    pub fn predict_batch(&self, windows: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        for w in windows {
            self.check_window(*w)?;
        }
        let mut out = Array2::zeros((windows.len(), self.n_features));
        let chunk = self.micro_batch().min(256);
        let mut row = 0;
        for part in windows.chunks(chunk) {
            let mut tape = Tape::new(&self.params);
            let y = self.forward(&mut tape, part)?;
            let y = tape.value(y);
            out.slice_mut(ndarray::s![row..row + part.len(), ..])
                .assign(y);
            row += part.len();
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{} prediction", self.kind()),
            });
        }
        Ok(out)
    }

    pub fn predict(&self, window: ArrayView2<f64>) -> Result<ndarray::Array1<f64>> {
        Ok(self.predict_batch(&[window])?.row(0).to_owned())
    }

    /// Mean squared error of the batch against `targets` (`B x n`) and its
    /// gradient. Dropout masks come from `rng` when given.
    pub fn loss_and_grads(
        &self,
        params: &ParamSet,
        windows: &[ArrayView2<f64>],
        targets: ArrayView2<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Grads)> {
        let total = windows.len();
        let mut grads = Grads::zeros_like(params);
        let mut loss = 0.0;
        let chunk = self.micro_batch().min(total.max(1));
        let mut start = 0;
        for part in windows.chunks(chunk) {
            let mut tape = match rng.as_deref_mut() {
                Some(r) => Tape::training(params, ChaCha8Rng::seed_from_u64(r.next_u64())),
                None => Tape::new(params),
            };
            let y = self.forward(&mut tape, part)?;
            let t = targets
                .slice(ndarray::s![start..start + part.len(), ..])
                .to_owned();
            let l = tape.mse(y, t);
            let weight = part.len() as f64 / total as f64;
            loss += weight * tape.value(l)[[0, 0]];
            let mut g = tape.backward(l);
            if weight != 1.0 {
                g.scale(weight);
            }
            grads.add_assign(&g);
            start += part.len();
        }
        Ok((loss, grads))
    }

    /// Per-gate LSTM weights, for checking against the plain recurrence.
    pub fn lstm_weights(&self) -> Option<LstmWeights> {
        match &self.net {
            Net::Lstm(m) => Some(m.weights(&self.params)),
            _ => None,
        }
    }

    /// Encoder output of the attention models, `L' x d_model`.
    pub fn encode(&self, tape: &mut Tape, window: ArrayView2<f64>) -> Result<Option<Var>> {
        Ok(match &self.net {
            Net::Transformer(m) => Some(m.encode(tape, window)),
            Net::Informer(m) => Some(m.encode(tape, window)?),
            _ => None,
        })
    }

    /// Forces dense attention in the Informer encoder (no effect otherwise).
    pub fn set_dense_encoder(&mut self, dense: bool) {
        if let Net::Informer(m) = &mut self.net {
            m.dense_encoder = dense;
        }
    }
}
