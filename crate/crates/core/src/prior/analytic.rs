//! Exact Gaussian prior with a circulant stationary covariance.
//!
//! The score of a zero-mean Gaussian with covariance S under noise level tau
//! is -(S + tau^2 I)^{-1} z. With S circulant the solve is a frequency-domain
//! divide, so this prior serves as a fast exact oracle for everything built
//! on approximate score models.

use std::f64::consts::TAU as TWO_PI;
use std::sync::Arc;

use super::ScoreModel;
use crate::autodiff::{Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussianAnalyticPrior {
    coeff: f64,
    variance: f64,
    len: usize,
    spectrum: Vec<f64>,
}

impl GaussianAnalyticPrior {
    /// Circular AR(1) covariance: lag-m correlation coeff^|m|, marginal
    /// variance as given. The eigenvalues on the DFT basis are
    /// v (1-a^2) / (1 + a^2 - 2 a cos(2 pi j / L)).
    pub fn ar1(coeff: f64, variance: f64, len: usize) -> Result<Self> {
        if coeff.abs() >= 1.0 {
            return Err(Error::config(format!("ar(1) coefficient must satisfy |a| < 1, got {coeff}")));
        }
        if variance <= 0.0 {
            return Err(Error::config("prior variance must be positive"));
        }
        if len == 0 {
            return Err(Error::config("prior length must be positive"));
        }
        let spectrum = (0..len)
            .map(|j| {
                let c = (TWO_PI * j as f64 / len as f64).cos();
                variance * (1.0 - coeff * coeff) / (1.0 + coeff * coeff - 2.0 * coeff * c)
            })
            .collect();
        Ok(GaussianAnalyticPrior { coeff, variance, len, spectrum })
    }

    /// White Gaussian: diagonal covariance variance * I.
    pub fn white(variance: f64, len: usize) -> Result<Self> {
        Self::ar1(0.0, variance, len)
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Covariance eigenvalues on the DFT basis.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    fn score_gains(&self, tau: f64) -> Arc<Vec<f64>> {
        Arc::new(self.spectrum.iter().map(|&s| -1.0 / (s + tau * tau)).collect())
    }
}

impl ScoreModel for GaussianAnalyticPrior {
    fn score_var<'t>(&self, _tape: &'t Tape, z: Var<'t>, tau: f64) -> Result<Var<'t>> {
        if z.len() != self.len {
            return Err(Error::shape(
                "analytic score",
                format!("signal length {} vs prior length {}", z.len(), self.len),
            ));
        }
        if tau < 0.0 {
            return Err(Error::invalid("analytic score: tau must be nonnegative"));
        }
        z.circulant_filter(self.score_gains(tau))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_has_zero_score() {
        let p = GaussianAnalyticPrior::ar1(0.9, 1.0, 32).unwrap();
        let s = p.score(&vec![0.0; 32], 0.7).unwrap();
        assert!(s.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn white_prior_at_unit_tau_halves_and_negates() {
        let p = GaussianAnalyticPrior::white(1.0, 16).unwrap();
        let z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin()).collect();
        let s = p.score(&z, 1.0).unwrap();
        for (zi, si) in z.iter().zip(&s) {
            assert!((si + zi / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_trace_equals_total_variance() {
        // Mean eigenvalue equals the marginal variance, up to the circular
        // wrap-around correction of order a^L.
        let p = GaussianAnalyticPrior::ar1(0.8, 2.5, 64).unwrap();
        let mean = p.spectrum().iter().sum::<f64>() / 64.0;
        assert!((mean - 2.5).abs() < 1e-5, "trace/L {mean}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(GaussianAnalyticPrior::ar1(1.0, 1.0, 8).is_err());
        assert!(GaussianAnalyticPrior::ar1(0.5, 0.0, 8).is_err());
        assert!(GaussianAnalyticPrior::ar1(0.5, 1.0, 0).is_err());
    }
}
