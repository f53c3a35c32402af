//! Expectation-maximization over latent clean signals and operator
//! parameters.
//!
//! Observed signals are modeled as an unknown operator applied to draws from
//! the clean-signal prior. The engine alternates three phases along a
//! decreasing noise schedule: a posterior-mean estimate of each latent
//! (E step), operator fitting against those estimates (M step), and a
//! guided probability-flow step that moves the latents toward observations
//! that the current operator explains (latent update).

mod engine;

pub use engine::{
    e_step, em_init, em_iterate, latent_update, m_step, run_em, EmIterationOutput, EmRun,
    LatentGraph,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState};
use crate::dsp::SpectralCostConfig;
use crate::prior::NoiseSchedule;
use crate::{Error, Result};

/// Guidance-strength policy for the likelihood term of the latent update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZetaPolicy {
    /// zeta' / sqrt(max(cost, 1e-12)): stronger pull while the fit is poor,
    /// normalized so the step size tracks the cost scale. The engine feeds
    /// this policy the mean cost per spectral coefficient, which keeps the
    /// resulting guidance strength comparable across signal lengths.
    CostNormalized(f64),
    /// Fixed strength regardless of fit quality.
    Constant(f64),
}

impl ZetaPolicy {
    pub fn value(self, raw_cost: f64) -> f64 {
        match self {
            ZetaPolicy::CostNormalized(zp) => zeta_schedule(raw_cost, zp),
            ZetaPolicy::Constant(c) => c,
        }
    }

    /// True when the policy yields zero for every cost, which lets the
    /// latent update skip the likelihood graph entirely.
    pub fn is_null(self) -> bool {
        match self {
            ZetaPolicy::CostNormalized(zp) => zp == 0.0,
            ZetaPolicy::Constant(c) => c == 0.0,
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            ZetaPolicy::CostNormalized(zp) => zp,
            ZetaPolicy::Constant(c) => c,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::config(format!("guidance strength {v} must be finite and >= 0")));
        }
        Ok(())
    }
}

/// Cost-normalized guidance strength with a floor that keeps the output
/// finite as the cost approaches zero.
pub fn zeta_schedule(raw_cost: f64, zeta_prime: f64) -> f64 {
    zeta_prime / raw_cost.max(1e-12).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    /// Noise schedule; its step count is the number of EM iterations.
    pub schedule: NoiseSchedule,
    /// Operator optimizer steps per EM iteration. Zero freezes the operator,
    /// which together with a null zeta policy reduces the engine to
    /// unconditional prior sampling.
    pub m_its: usize,
    pub zeta: ZetaPolicy,
    /// Mini-batch size for the M step.
    pub batch: usize,
    pub adam: AdamConfig,
    pub cost: SpectralCostConfig,
    /// Stop the likelihood gradient at the denoised estimate instead of
    /// differentiating through the score model (cheaper, less accurate).
    pub frozen_denoiser: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            schedule: NoiseSchedule::default(),
            m_its: 20,
            zeta: ZetaPolicy::CostNormalized(0.2),
            batch: 4,
            adam: AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 1e-2 },
            cost: SpectralCostConfig::default(),
            frozen_denoiser: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("EM batch size must be positive"));
        }
        self.zeta.validate()?;
        self.cost.validate()
    }
}

/// Serializable progress of an EM run; everything needed to resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmState {
    /// Next schedule index to process.
    pub k: usize,
    /// One latent per observation, at noise level taus[k].
    pub latents: Vec<Vec<f64>>,
    /// Flat operator parameters.
    pub psi: Vec<f64>,
    pub adam: AdamState,
    /// Base seed; latent n was initialized from stream seed + n.
    pub seed: u64,
    /// Position within the M-step sampling stream.
    pub rng_word_pos: u128,
}

impl EmState {
    pub fn latent_rms(&self) -> f64 {
        let total: usize = self.latents.iter().map(|z| z.len()).sum();
        if total == 0 {
            return 0.0;
        }
        let energy: f64 = self.latents.iter().flatten().map(|v| v * v).sum();
        (energy / total as f64).sqrt()
    }
}

/// Per-iteration telemetry record, one JSON line per EM step downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmTelemetry {
    pub k: usize,
    pub tau: f64,
    /// Ensemble objective before and after the M step, at this iteration's
    /// denoised estimates.
    pub objective_start: f64,
    pub objective_end: f64,
    /// Mean guidance strength across observations (zero on the final
    /// iteration, which has no latent update).
    pub zeta_mean: f64,
    pub latent_rms: f64,
    pub wall_ms: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_matches_hand_arithmetic() {
        // 0.2 / sqrt(0.04) = 1.0.
        assert!((zeta_schedule(0.04, 0.2) - 1.0).abs() < 1e-12);
        // Doubling the cost divides by sqrt(2).
        let a = zeta_schedule(0.5, 0.2);
        let b = zeta_schedule(1.0, 0.2);
        assert!((a / b - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn zeta_is_finite_at_zero_cost() {
        let z = zeta_schedule(0.0, 0.2);
        assert!(z.is_finite());
        assert!((z - 0.2 / 1e-6).abs() < 1e-6);
    }

    #[test]
    fn constant_policy_ignores_cost() {
        let p = ZetaPolicy::Constant(0.7);
        assert_eq!(p.value(0.01), 0.7);
        assert_eq!(p.value(100.0), 0.7);
        assert!(!p.is_null());
        assert!(ZetaPolicy::Constant(0.0).is_null());
        assert!(ZetaPolicy::CostNormalized(0.0).is_null());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = EmConfig::default();
        cfg.batch = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = EmConfig::default();
        cfg.zeta = ZetaPolicy::CostNormalized(-0.1);
        assert!(cfg.validate().is_err());
        assert!(EmConfig::default().validate().is_ok());
    }

    #[test]
    fn state_survives_a_json_round_trip() {
        let state = EmState {
            k: 3,
            latents: vec![vec![0.5, -1.25], vec![2.0, 0.0]],
            psi: vec![1.5],
            adam: AdamState::new(AdamConfig::default(), 1),
            seed: 42,
            rng_word_pos: 123456789,
        };
        let text = serde_json::to_string(&state).unwrap();
        let back: EmState = serde_json::from_str(&text).unwrap();
        assert_eq!(back.k, state.k);
        assert_eq!(back.latents, state.latents);
        assert_eq!(back.psi, state.psi);
        assert_eq!(back.seed, state.seed);
        assert_eq!(back.rng_word_pos, state.rng_word_pos);
    }

    #[test]
    fn latent_rms_of_known_values() {
        let state = EmState {
            k: 0,
            latents: vec![vec![3.0, 4.0], vec![0.0, 0.0]],
            psi: vec![],
            adam: AdamState::new(AdamConfig::default(), 0),
            seed: 0,
            rng_word_pos: 0,
        };
        // sqrt((9 + 16) / 4) = 2.5
        assert!((state.latent_rms() - 2.5).abs() < 1e-12);
    }
}
