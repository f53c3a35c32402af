//! Parametric audio effect operators with a shared estimation interface.
//!
//! An operator is a differentiable map from a signal to a signal, fully
//! described by a flat parameter vector so that one optimizer loop can fit
//! any model. Two families are provided: a structured
//! filter/waveshaper/filter chain and an unstructured gated conv network.

mod eq;
mod gain;
mod gcn;
mod spline;
mod wh;

pub use eq::{eq_apply, interp_matrix, third_octave_grid};
pub use gain::GainOperator;
pub use gcn::{GcnConfig, GcnOperator};
pub use spline::{ccr_spline_eval, identity_spline_points, spline_knots, SPLINE_POINTS};
pub use wh::{unit_mag_raw, WhOperator, WhParams};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::Signal;
use crate::Result;

/// A differentiable signal-to-signal map with flat parameters.
pub trait OperatorModel {
    /// Short stable name used in checkpoints and reports.
    fn kind(&self) -> &'static str;

    /// Length of the flat parameter vector.
    fn param_count(&self) -> usize;

    /// Starting parameters. Structured models ignore the seed and start at
    /// the identity map; network models draw deterministic random weights.
    fn init_params(&self, seed: u64) -> Tensor;

    /// Applies the operator on a tape so gradients can flow to both the
    /// parameters and the input signal.
    fn apply_var<'t>(&self, tape: &'t Tape, params: Var<'t>, input: Var<'t>) -> Result<Var<'t>>;

    /// Plain application without gradient bookkeeping.
    fn apply(&self, params: &Tensor, signal: &Signal) -> Result<Signal> {
        let tape = Tape::new();
        let p = tape.leaf(params.clone())?;
        let x = tape.leaf(Tensor::from_vec(signal.samples().to_vec()))?;
        let y = self.apply_var(&tape, p, x)?;
        signal.with_samples(y.value().data().to_vec())
    }
}
