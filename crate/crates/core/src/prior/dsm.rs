//! Denoising score matching: fit the denoiser on clean segments corrupted
//! at random noise levels.
//!
//! Each step draws a batch of (segment, sigma, noise) triples with sigma
//! log-uniform over the schedule's range, and minimizes the weighted
//! reconstruction error lambda(sigma) * mean((D(x + n, sigma) - x)^2) with
//! lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2, which
//! equalizes the inner network's effective target scale across levels.

use super::denoiser::{DenoiserNet, TrainedDenoiser};
use super::schedule::NoiseSchedule;
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::dsp::Signal;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DsmConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DsmConfig {
    fn default() -> Self {
        DsmConfig { iters: 2000, batch: 8, lr: 1e-3, seed: 0 }
    }
}

/// Trains the denoiser; returns the fitted model and the per-step loss.
pub fn dsm_train(
    dataset: &[Signal],
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    cfg: &DsmConfig,
) -> Result<(TrainedDenoiser, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::invalid("dsm_train: empty dataset"));
    }
    let len = dataset[0].len();
    if len == 0 || dataset.iter().any(|s| s.len() != len) {
        return Err(Error::invalid("dsm_train: segments must be nonempty and equal length"));
    }
    if cfg.iters == 0 || cfg.batch == 0 {
        return Err(Error::config("dsm_train: iters and batch must be positive"));
    }

    let sigma_data = net.config().sigma_data;
    let (lo, hi) = (schedule.sigma_min(), schedule.sigma_max());
    let log_ratio = (hi / lo).ln();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.init_params(cfg.seed).into_data();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), params.len());
    let mut history = Vec::with_capacity(cfg.iters);

    for _ in 0..cfg.iters {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(params.clone()))?;
        let mut total: Option<Var> = None;
        for _ in 0..cfg.batch {
            let idx = rng.random_range(0..dataset.len());
            let x = dataset[idx].samples();
            let sigma = lo * (log_ratio * rng.random::<f64>()).exp();
            let noisy: Vec<f64> =
                x.iter().map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            let z = tape.leaf(Tensor::from_vec(noisy))?;
            let clean = tape.leaf(Tensor::from_vec(x.to_vec()))?;
            let d = net.denoise_var(&tape, p, z, sigma)?;
            let diff = d.sub(clean)?;
            let weight = (sigma * sigma + sigma_data * sigma_data)
                / (sigma * sigma_data * sigma * sigma_data);
            let term = diff.mul(diff)?.mean()?.scale(weight)?;
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
        let loss = total
            .expect("batch is validated positive")
            .scale(1.0 / cfg.batch as f64)?;
        history.push(loss.item()?);
        let grads = tape.backward(loss)?;
        adam.step(&mut params, grads.get(p).data())?;
    }

    Ok((TrainedDenoiser::new(net.clone(), Tensor::from_vec(params))?, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::denoiser::DenoiserConfig;

    #[test]
    fn empty_and_ragged_datasets_are_rejected() {
        let net = DenoiserNet::new(DenoiserConfig {
            blocks: 1,
            channels: 2,
            kernel: 3,
            n_freqs: 2,
            sigma_data: 1.0,
        })
        .unwrap();
        let schedule = NoiseSchedule::default();
        let cfg = DsmConfig { iters: 1, batch: 1, lr: 1e-3, seed: 0 };
        assert!(dsm_train(&[], &net, &schedule, &cfg).is_err());
        let ragged = vec![
            Signal::new(vec![0.0; 8], 8000.0).unwrap(),
            Signal::new(vec![0.0; 9], 8000.0).unwrap(),
        ];
        assert!(dsm_train(&ragged, &net, &schedule, &cfg).is_err());
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let net = DenoiserNet::new(DenoiserConfig {
            blocks: 1,
            channels: 3,
            kernel: 3,
            n_freqs: 2,
            sigma_data: 1.0,
        })
        .unwrap();
        let schedule = NoiseSchedule::default();
        let data = vec![Signal::new((0..32).map(|i| (i as f64 * 0.3).sin()).collect(), 8000.0).unwrap()];
        let cfg = DsmConfig { iters: 5, batch: 2, lr: 1e-3, seed: 42 };
        let (a, la) = dsm_train(&data, &net, &schedule, &cfg).unwrap();
        let (b, lb) = dsm_train(&data, &net, &schedule, &cfg).unwrap();
        assert_eq!(a.params().data(), b.params().data());
        assert_eq!(la, lb);
    }
}
