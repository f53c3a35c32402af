//! Noise-level discretization for the diffusion prior.
//!
//! Variance-exploding convention: the marginal noise standard deviation at
//! diffusion time tau is tau itself. The grid warps K levels between
//! sigma_max and sigma_min with a power-law exponent rho, spending most
//! steps near the clean end.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigma_max: f64,
    sigma_min: f64,
    steps: usize,
    rho: f64,
    taus: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(sigma_max: f64, sigma_min: f64, steps: usize, rho: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(Error::config(format!(
                "noise schedule needs 0 < sigma_min < sigma_max, got {sigma_min}..{sigma_max}"
            )));
        }
        if steps < 2 {
            return Err(Error::config("noise schedule needs at least 2 steps"));
        }
        if rho <= 0.0 {
            return Err(Error::config("noise schedule warp exponent must be positive"));
        }
        let inv = 1.0 / rho;
        let (hi, lo) = (sigma_max.powf(inv), sigma_min.powf(inv));
        let mut taus: Vec<f64> = (0..steps)
            .map(|k| {
                let t = k as f64 / (steps - 1) as f64;
                (hi + t * (lo - hi)).powf(rho)
            })
            .collect();
        // Endpoints are pinned so the boundary invariants hold exactly.
        taus[0] = sigma_max;
        taus[steps - 1] = sigma_min;
        Ok(NoiseSchedule { sigma_max, sigma_min, steps, rho, taus })
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Noise levels tau_1..tau_K, strictly decreasing.
    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::new(10.0, 1e-4, 101, 7.0).expect("default schedule parameters are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_monotonicity() {
        let s = NoiseSchedule::default();
        assert_eq!(s.taus().len(), 101);
        assert_eq!(s.taus()[0], 10.0);
        assert_eq!(s.taus()[100], 1e-4);
        assert!(s.taus().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn warp_concentrates_steps_near_the_clean_end() {
        let s = NoiseSchedule::default();
        let below_one = s.taus().iter().filter(|&&t| t < 1.0).count();
        assert!(below_one > 50, "only {below_one} of 101 levels below 1.0");
    }

    #[test]
    fn interior_matches_the_warp_formula() {
        let s = NoiseSchedule::new(8.0, 1e-3, 11, 7.0).unwrap();
        let k = 4;
        let t = k as f64 / 10.0;
        let want = (8f64.powf(1.0 / 7.0) + t * (1e-3f64.powf(1.0 / 7.0) - 8f64.powf(1.0 / 7.0)))
            .powf(7.0);
        assert!((s.taus()[k] - want).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(NoiseSchedule::new(1.0, 2.0, 10, 7.0).is_err());
        assert!(NoiseSchedule::new(1.0, 1e-4, 1, 7.0).is_err());
        assert!(NoiseSchedule::new(1.0, 1e-4, 10, 0.0).is_err());
    }
}
