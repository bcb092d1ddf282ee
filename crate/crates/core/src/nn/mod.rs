//! Minimal differentiable-programming kit shared by all forecasters.

mod adam;
pub mod gradcheck;
mod params;
mod tape;

pub use adam::Adam;
pub use params::{Grads, ParamId, ParamSet};
pub use tape::{circular_correlation_fft, sigmoid, softmax_rows, Mat, Tape, Var};
