//! Signal embeddings and cosine distance.
//!
//! The embedding is a deterministic log-mel statistics vector: per-band mean
//! and standard deviation over frames. It is a lightweight stand-in that
//! exercises the cosine-distance evaluation; scores are only comparable
//! between runs of this same embedding.

use serde::{Deserialize, Serialize};

use super::mel::{log_mel, LogMelConfig};
use super::signal::Signal;
use crate::Result;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub n_mels: usize,
    pub window_len: usize,
    /// Stability constant guarding the norm product.
    pub eps: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { n_mels: 64, window_len: 1024, eps: 1e-8 }
    }
}

/// Concatenated per-band mean and population standard deviation of the
/// log-mel spectrogram: output length 2 * n_mels.
pub fn embed(signal: &Signal, cfg: &EmbeddingConfig) -> Result<Vec<f64>> {
    let lm = log_mel(signal, &LogMelConfig::new(cfg.window_len, cfg.n_mels))?;
    let (n_mels, n_frames) = (lm.shape()[0], lm.shape()[1]);
    let mut out = vec![0.0; 2 * n_mels];
    for m in 0..n_mels {
        let row = &lm.data()[m * n_frames..(m + 1) * n_frames];
        let mean = row.iter().sum::<f64>() / n_frames as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n_frames as f64;
        out[m] = mean;
        out[n_mels + m] = var.sqrt();
    }
    Ok(out)
}

/// 1 - a.b / max(|a||b|, eps); range [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb).max(eps)
}

/// Cosine distance between the two signals' embeddings.
pub fn embedding_cosine_distance(y_hat: &Signal, y: &Signal, cfg: &EmbeddingConfig) -> Result<f64> {
    let a = embed(y_hat, cfg)?;
    let b = embed(y, cfg)?;
    Ok(cosine_distance(&a, &b, cfg.eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_have_zero_distance() {
        let v = vec![0.3, -0.7, 1.1];
        assert!(cosine_distance(&v, &v, 1e-8).abs() < 1e-12);
    }

    #[test]
    fn opposite_vectors_have_distance_two() {
        let v = vec![0.3, -0.7, 1.1];
        let n: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_distance(&v, &n, 1e-8) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vectors_have_distance_one() {
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 5.0], 1e-8) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_guarded() {
        let d = cosine_distance(&[0.0, 0.0], &[1.0, 0.0], 1e-8);
        assert!(d.is_finite());
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_signals_embed_identically() {
        let tone: Vec<f64> = (0..4096)
            .map(|t| (2.0 * std::f64::consts::PI * 440.0 * t as f64 / 44100.0).sin())
            .collect();
        let s = Signal::new(tone, 44100.0).unwrap();
        let cfg = EmbeddingConfig::default();
        let d = embedding_cosine_distance(&s, &s, &cfg).unwrap();
        assert!(d.abs() < 1e-12);
    }
}
