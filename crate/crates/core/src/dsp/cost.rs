//! Compressed-spectrum reconstruction cost.
//!
//! The cost compares two signals in an STFT domain whose magnitudes are
//! compressed by |Z|^c while phases are kept, then sums squared complex
//! differences. The reference side is precomputed once and reused across
//! gradient evaluations.

use serde::{Deserialize, Serialize};

use super::stft::{StftConfig, StftPlan};
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralCostConfig {
    /// Magnitude compression exponent in (0, 1].
    pub compression: f64,
    pub stft: StftConfig,
}

impl Default for SpectralCostConfig {
    fn default() -> Self {
        SpectralCostConfig { compression: 0.5, stft: StftConfig::default() }
    }
}

impl SpectralCostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::config(format!(
                "compression exponent {} must be in (0, 1]",
                self.compression
            )));
        }
        self.stft.validate()
    }
}

/// Compressed spectrum of a fixed reference signal plus the analysis plan,
/// ready to score candidates of the same length.
pub struct CompressedTarget {
    plan: StftPlan,
    comp: Tensor,
    compression: f64,
}

impl CompressedTarget {
    pub fn new(reference: &[f64], cfg: &SpectralCostConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = StftPlan::new(cfg.stft, reference.len())?;
        let tape = Tape::new();
        let y = tape.leaf(Tensor::from_vec(reference.to_vec()))?;
        let comp = plan.stft_var(y)?.compressed_complex(cfg.compression)?.value();
        Ok(CompressedTarget { plan, comp, compression: cfg.compression })
    }

    pub fn plan(&self) -> &StftPlan {
        &self.plan
    }

    /// Number of real coefficients in the compressed spectrum, i.e. the
    /// number of terms summed by `cost_var`. Dividing a cost by this count
    /// gives a per-coefficient mean that is comparable across signal lengths
    /// and window configurations.
    pub fn coeff_count(&self) -> usize {
        self.comp.data().len()
    }

    /// Sum of squared complex differences between the candidate's compressed
    /// spectrum and the stored reference spectrum, as a tape scalar.
    pub fn cost_var<'t>(&self, tape: &'t Tape, candidate: Var<'t>) -> Result<Var<'t>> {
        let comp = self.plan.stft_var(candidate)?.compressed_complex(self.compression)?;
        let target = tape.leaf(self.comp.clone())?;
        let diff = comp.sub(target)?;
        diff.mul(diff)?.sum()
    }
}

/// One-shot cost between equal-length signals.
pub fn compressed_stft_cost(y: &[f64], y_hat: &[f64], cfg: &SpectralCostConfig) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::shape(
            "compressed_stft_cost",
            format!("lengths {} vs {}", y.len(), y_hat.len()),
        ));
    }
    let target = CompressedTarget::new(y, cfg)?;
    let tape = Tape::new();
    let cand = tape.leaf(Tensor::from_vec(y_hat.to_vec()))?;
    target.cost_var(&tape, cand)?.item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg_small() -> SpectralCostConfig {
        SpectralCostConfig { compression: 0.5, stft: StftConfig::new(64, 16, 128).unwrap() }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn zero_for_identical_signals() {
        let y = noise(256, 1);
        assert_eq!(compressed_stft_cost(&y, &y, &cfg_small()).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_and_non_negative() {
        let a = noise(256, 2);
        let b = noise(256, 3);
        let cab = compressed_stft_cost(&a, &b, &cfg_small()).unwrap();
        let cba = compressed_stft_cost(&b, &a, &cfg_small()).unwrap();
        assert!(cab > 0.0);
        assert!((cab - cba).abs() < 1e-9 * cab.max(1.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = noise(256, 4);
        let b = noise(255, 5);
        assert!(compressed_stft_cost(&a, &b, &cfg_small()).is_err());
    }

    #[test]
    fn invalid_compression_is_rejected() {
        let mut cfg = cfg_small();
        cfg.compression = 0.0;
        assert!(compressed_stft_cost(&[0.0; 256], &[0.0; 256], &cfg).is_err());
        cfg.compression = 1.5;
        assert!(compressed_stft_cost(&[0.0; 256], &[0.0; 256], &cfg).is_err());
    }
}
