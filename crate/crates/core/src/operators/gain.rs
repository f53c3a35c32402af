//! One-parameter linear gain, the smallest operator model. Useful for
//! smoke-testing estimation loops before reaching for the larger models.

use super::OperatorModel;
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct GainOperator;

impl OperatorModel for GainOperator {
    fn kind(&self) -> &'static str {
        "gain"
    }

    fn param_count(&self) -> usize {
        1
    }

    fn init_params(&self, _seed: u64) -> Tensor {
        Tensor::from_vec(vec![1.0])
    }

    fn apply_var<'t>(&self, _tape: &'t Tape, params: Var<'t>, input: Var<'t>) -> Result<Var<'t>> {
        if params.len() != 1 {
            return Err(Error::shape("gain apply", format!("{} params, want 1", params.len())));
        }
        input.mul_scalar(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Signal;

    #[test]
    fn scales_every_sample() {
        let op = GainOperator;
        let s = Signal::new(vec![0.5, -1.0, 0.25], 44100.0).unwrap();
        let out = op.apply(&Tensor::from_vec(vec![2.0]), &s).unwrap();
        assert_eq!(out.samples(), &[1.0, -2.0, 0.5]);
        assert_eq!(op.init_params(0).data(), &[1.0]);
    }
}
