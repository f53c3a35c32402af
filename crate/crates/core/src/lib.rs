//! Estimation of unknown nonlinear audio effects from unpaired corpora.
//!
//! Two estimation routes share the same differentiable operator models:
//! an expectation-maximization loop guided by a diffusion prior over clean
//! audio, and an adversarial loop with multi-resolution spectrogram
//! discriminators. A supervised trainer on paired data serves as the
//! reference point, and the evaluation harness ties everything together
//! over synthetic corpora with known ground-truth effects.

pub mod adversarial;
pub mod autodiff;
pub mod dsp;
pub mod em;
pub mod eval;
mod error;
pub mod operators;
pub mod prior;

pub use dsp::Signal;
pub use error::{Error, Result};
