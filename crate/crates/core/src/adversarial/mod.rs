//! Adversarial operator estimation. An ensemble of log-mel discriminators
//! at three STFT window sizes is trained with a hinge objective to separate
//! observed effected audio from operator outputs on unpaired clean segments,
//! while the operator is trained to close that gap. Includes advisory
//! collapse diagnostics over the training telemetry.

mod disc;
mod engine;

pub use disc::{DiscConfig, Discriminator};
pub use engine::{run_adversarial, AdvRun};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::{Error, Result};

/// Training settings for the adversarial loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    pub iterations: usize,
    pub batch: usize,
    /// Segment length in samples; must cover the largest discriminator
    /// window.
    pub segment_len: usize,
    pub windows: Vec<usize>,
    pub n_mels: usize,
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
    pub disc_adam: AdamConfig,
    pub op_adam: AdamConfig,
    /// Discriminator rounds per operator update.
    pub disc_per_op: usize,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            iterations: 5000,
            batch: 5,
            segment_len: 24000,
            windows: vec![512, 1024, 2048],
            n_mels: 64,
            channels: vec![16, 32, 64, 64],
            leaky_slope: 0.2,
            disc_adam: AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.9, eps: 1e-8, weight_decay: 0.0 },
            op_adam: AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.0 },
            disc_per_op: 1,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("adversarial training needs at least one iteration"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.windows.is_empty() {
            return Err(Error::config("at least one discriminator window required"));
        }
        let largest = *self.windows.iter().max().unwrap();
        if self.segment_len < largest {
            return Err(Error::config(format!(
                "segment length {} shorter than the largest window {}",
                self.segment_len, largest
            )));
        }
        if self.disc_per_op == 0 {
            return Err(Error::config("disc_per_op must be at least 1"));
        }
        for &w in &self.windows {
            self.disc_config(w).validate()?;
        }
        Ok(())
    }

    pub fn disc_config(&self, window_len: usize) -> DiscConfig {
        DiscConfig {
            window_len,
            n_mels: self.n_mels,
            channels: self.channels.clone(),
            leaky_slope: self.leaky_slope,
        }
    }
}

/// Hinge objective for one discriminator: unit margins on both sides.
/// Zero exactly when every real score is >= 1 and every fake score <= -1.
pub fn disc_hinge_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("hinge loss needs nonempty batches"));
    }
    let real: f64 = d_real.iter().map(|&d| (1.0 - d).max(0.0)).sum::<f64>() / d_real.len() as f64;
    let fake: f64 = d_fake.iter().map(|&d| (1.0 + d).max(0.0)).sum::<f64>() / d_fake.len() as f64;
    Ok(real + fake)
}

/// Operator-side objective for one discriminator: negated mean fake score.
/// Decreasing values mean the discriminator rates the fakes as more real.
pub fn gen_loss(d_fake: &[f64]) -> Result<f64> {
    if d_fake.is_empty() {
        return Err(Error::invalid("generator loss needs a nonempty batch"));
    }
    Ok(-d_fake.iter().sum::<f64>() / d_fake.len() as f64)
}

/// One telemetry record per training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvRecord {
    pub iteration: usize,
    /// Hinge loss per discriminator, ordered as the configured windows.
    pub disc_loss: Vec<f64>,
    /// Sum over discriminators of the negated mean fake score.
    pub gen_loss: f64,
}

/// Advisory flags raised by scanning training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// A sustained window of near-zero discriminator loss with rising
    /// generator loss: the discriminator stopped providing useful gradients
    /// by winning outright.
    pub too_strong: bool,
    /// A sustained window with the loss pinned at its uninformative value of
    /// 2 (scores stuck at zero): the discriminator never learned to separate.
    pub too_weak: bool,
    /// Window length actually scanned.
    pub window: usize,
}

/// Scans telemetry for collapse signatures over 500-iteration windows
/// (shorter runs scan their full length). Advisory only; never fails a run.
pub fn collapse_diagnostics(records: &[AdvRecord]) -> Result<CollapseReport> {
    if records.len() < 100 {
        return Err(Error::invalid(format!(
            "collapse diagnostics need at least 100 records, got {}",
            records.len()
        )));
    }
    let window = records.len().min(500);
    let mean_disc: Vec<f64> = records
        .iter()
        .map(|r| r.disc_loss.iter().sum::<f64>() / r.disc_loss.len().max(1) as f64)
        .collect();
    let mut too_strong = false;
    let mut too_weak = false;
    let step = (window / 4).max(1);
    let mut start = 0;
    while start + window <= records.len() {
        let d = &mean_disc[start..start + window];
        if d.iter().all(|&v| v < 0.05) {
            let half = window / 2;
            let first: f64 = records[start..start + half].iter().map(|r| r.gen_loss).sum::<f64>()
                / half as f64;
            let second: f64 = records[start + half..start + window]
                .iter()
                .map(|r| r.gen_loss)
                .sum::<f64>()
                / (window - half) as f64;
            if second > first {
                too_strong = true;
            }
        }
        if d.iter().all(|&v| (v - 2.0).abs() < 1e-3) {
            too_weak = true;
        }
        if too_strong && too_weak {
            break;
        }
        start += step;
    }
    Ok(CollapseReport { too_strong, too_weak, window })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_matches_margin_arithmetic() {
        assert_eq!(disc_hinge_loss(&[1.0, 1.0], &[-1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(disc_hinge_loss(&[0.0], &[0.0]).unwrap(), 2.0);
        assert_eq!(disc_hinge_loss(&[2.0], &[-3.0]).unwrap(), 0.0);
        assert_eq!(disc_hinge_loss(&[0.5, 1.5], &[-2.0, 0.0]).unwrap(), 0.25 + 0.5);
        assert!(disc_hinge_loss(&[], &[0.0]).is_err());
    }

    #[test]
    fn hinge_is_nonnegative_and_zero_only_past_margins() {
        let mut v = 0.9f64;
        for _ in 0..50 {
            v = 4.0 * v * (1.0 - v);
            let r = [2.0 * v - 0.5, 1.3];
            let f = [-2.0 * v, -1.1];
            let h = disc_hinge_loss(&r, &f).unwrap();
            assert!(h >= 0.0);
            let margins = r.iter().all(|&x| x >= 1.0) && f.iter().all(|&x| x <= -1.0);
            assert_eq!(h == 0.0, margins, "scores {r:?} {f:?}");
        }
    }

    #[test]
    fn generator_loss_is_negated_mean() {
        assert_eq!(gen_loss(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gen_loss(&[1.0, 3.0]).unwrap(), -2.0);
        assert!(gen_loss(&[]).is_err());
    }

    #[test]
    fn collapse_flags_fire_on_constructed_telemetry() {
        let strong: Vec<AdvRecord> = (0..600)
            .map(|i| AdvRecord {
                iteration: i,
                disc_loss: vec![0.0, 0.0, 0.0],
                gen_loss: i as f64 * 0.01,
            })
            .collect();
        let r = collapse_diagnostics(&strong).unwrap();
        assert!(r.too_strong && !r.too_weak);

        let weak: Vec<AdvRecord> = (0..600)
            .map(|i| AdvRecord { iteration: i, disc_loss: vec![2.0, 2.0, 2.0], gen_loss: 0.0 })
            .collect();
        let r = collapse_diagnostics(&weak).unwrap();
        assert!(r.too_weak && !r.too_strong);

        assert!(collapse_diagnostics(&strong[..99]).is_err());
    }

    #[test]
    fn healthy_oscillation_raises_no_flags() {
        let healthy: Vec<AdvRecord> = (0..800)
            .map(|i| AdvRecord {
                iteration: i,
                disc_loss: vec![1.0 + 0.4 * (i as f64 * 0.1).sin(); 3],
                gen_loss: 0.2 * (i as f64 * 0.07).cos(),
            })
            .collect();
        let r = collapse_diagnostics(&healthy).unwrap();
        assert!(!r.too_strong && !r.too_weak);
        assert_eq!(r.window, 500);
    }

    #[test]
    fn config_validation_rejects_short_segments() {
        let cfg = AdvConfig { segment_len: 1024, ..AdvConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(AdvConfig::default().validate().is_ok());
    }
}
