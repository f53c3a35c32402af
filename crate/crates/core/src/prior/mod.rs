//! Diffusion prior machinery: noise schedule, score models, denoiser
//! training, Tweedie denoising, and the probability-flow sampler.

mod analytic;
mod denoiser;
mod dsm;
mod sampler;
mod schedule;

pub use analytic::GaussianAnalyticPrior;
pub use denoiser::{preconditioning, DenoiserConfig, DenoiserNet, TrainedDenoiser};
pub use dsm::{dsm_train, DsmConfig};
pub use sampler::{euler_prior_step, ode_sample};
pub use schedule::NoiseSchedule;

use crate::autodiff::{Tape, Tensor, Var};
use crate::Result;

/// Approximates the gradient of the log prior density at noise level tau.
pub trait ScoreModel {
    /// Score on the tape; gradients flow back into `z`.
    fn score_var<'t>(&self, tape: &'t Tape, z: Var<'t>, tau: f64) -> Result<Var<'t>>;

    /// Plain score without gradient bookkeeping.
    fn score(&self, z: &[f64], tau: f64) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let zv = tape.leaf(Tensor::from_vec(z.to_vec()))?;
        Ok(self.score_var(&tape, zv, tau)?.value().into_data())
    }
}

/// Posterior-mean estimate of the clean signal from a noisy one:
/// z0 = tau^2 * score(z, tau) + z.
pub fn tweedie_denoise(model: &dyn ScoreModel, z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau == 0.0 {
        return Ok(z.to_vec());
    }
    let s = model.score(z, tau)?;
    Ok(z.iter().zip(&s).map(|(&zi, &si)| zi + tau * tau * si).collect())
}

/// Tape version of the Tweedie estimate, for losses that differentiate
/// through the denoised signal.
pub fn tweedie_denoise_var<'t>(
    model: &dyn ScoreModel,
    tape: &'t Tape,
    z: Var<'t>,
    tau: f64,
) -> Result<Var<'t>> {
    if tau == 0.0 {
        return Ok(z);
    }
    let s = model.score_var(tape, z, tau)?;
    z.add(s.scale(tau * tau)?)
}
