//! Multi-scale spectrogram distances.

use serde::{Deserialize, Serialize};

use super::mel::LOG_MAG_FLOOR;
use super::signal::Signal;
use super::stft::{stft, StftConfig};
use crate::{Error, Result};

/// Window set for multi-scale magnitudes; each window w is analyzed at
/// hop w/4 with FFT length w.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MssConfig {
    pub windows: Vec<usize>,
}

impl Default for MssConfig {
    fn default() -> Self {
        MssConfig { windows: vec![2048, 1024, 512, 256, 128, 64] }
    }
}

impl MssConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::config("empty multi-scale window set"));
        }
        for &w in &self.windows {
            if !w.is_power_of_two() || w < 8 {
                return Err(Error::config(format!("window {w} must be a power of two >= 8")));
            }
        }
        Ok(())
    }

    fn stft_config(w: usize) -> Result<StftConfig> {
        StftConfig::new(w, w / 4, w)
    }
}

fn check_pair(y_hat: &Signal, y: &Signal) -> Result<()> {
    if y_hat.len() != y.len() {
        return Err(Error::shape(
            "multi-scale metric",
            format!("lengths {} vs {}", y_hat.len(), y.len()),
        ));
    }
    Ok(())
}

fn accumulate(
    y_hat: &Signal,
    y: &Signal,
    cfg: &MssConfig,
    map: impl Fn(f64) -> f64,
) -> Result<f64> {
    check_pair(y_hat, y)?;
    cfg.validate()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for &w in &cfg.windows {
        let sc = MssConfig::stft_config(w)?;
        let ma = stft(y_hat, &sc)?.magnitudes();
        let mb = stft(y, &sc)?.magnitudes();
        for (&a, &b) in ma.iter().zip(&mb) {
            total += (map(a) - map(b)).abs();
        }
        count += ma.len();
    }
    Ok(total / count as f64)
}

/// Mean absolute magnitude difference over all (window, bin, frame)
/// entries, pooled globally across the window set.
pub fn l1_mss(y_hat: &Signal, y: &Signal, cfg: &MssConfig) -> Result<f64> {
    accumulate(y_hat, y, cfg, |m| m)
}

/// Same pooling on log10 magnitudes, floored at 1e-5.
pub fn l1_log_mss(y_hat: &Signal, y: &Signal, cfg: &MssConfig) -> Result<f64> {
    accumulate(y_hat, y, cfg, |m| m.max(LOG_MAG_FLOOR).log10())
}
