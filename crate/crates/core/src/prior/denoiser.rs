//! Trainable conv denoiser with noise-level preconditioning.
//!
//! The network predicts the clean signal from a noisy one at a known noise
//! level sigma. Preconditioning follows the skip/output/input/noise scaling
//! convention: D(z, sigma) = c_skip z + c_out F(c_in z, c_noise), which keeps
//! the inner network's inputs and targets near unit scale across the whole
//! sigma range. F is a stack of residual causal conv blocks; the noise level
//! enters through fixed sinusoidal features mapped to a per-block channel
//! bias.

use super::ScoreModel;
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Number of sinusoidal noise-embedding frequencies (features = 2x).
    pub n_freqs: usize,
    /// Data standard deviation the preconditioning is tuned for.
    pub sigma_data: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { blocks: 6, channels: 32, kernel: 5, n_freqs: 8, sigma_data: 1.0 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.channels == 0 || self.kernel == 0 || self.n_freqs == 0 {
            return Err(Error::config("denoiser blocks, channels, kernel, n_freqs must be positive"));
        }
        if self.sigma_data <= 0.0 {
            return Err(Error::config("denoiser sigma_data must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserNet {
    config: DenoiserConfig,
}

/// Preconditioning scalings at noise level sigma.
pub fn preconditioning(sigma: f64, sigma_data: f64) -> (f64, f64, f64, f64) {
    let s2 = sigma * sigma;
    let d2 = sigma_data * sigma_data;
    let c_skip = d2 / (s2 + d2);
    let c_out = sigma * sigma_data / (s2 + d2).sqrt();
    let c_in = 1.0 / (s2 + d2).sqrt();
    let c_noise = sigma.ln() / 4.0;
    (c_skip, c_out, c_in, c_noise)
}

impl DenoiserNet {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        Ok(DenoiserNet { config })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Input conv (C*K + C), per block a conv (C*C*K + C) and a noise
    /// embedding map (C*2F + C), output conv (C*K + 1).
    pub fn param_count(&self) -> usize {
        let c = self.config.channels;
        let k = self.config.kernel;
        let f2 = 2 * self.config.n_freqs;
        let per_block = c * c * k + c + c * f2 + c;
        c * k + c + self.config.blocks * per_block + c * k + 1
    }

    /// Weights uniform on +-1/sqrt(fan_in), biases zero, output conv zero so
    /// the initial denoiser is pure skip scaling.
    pub fn init_params(&self, seed: u64) -> Tensor {
        let c = self.config.channels;
        let k = self.config.kernel;
        let f2 = 2 * self.config.n_freqs;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.param_count());
        let mut uniform = |n: usize, fan_in: usize, out: &mut Vec<f64>| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..n {
                out.push((rng.random::<f64>() * 2.0 - 1.0) * s);
            }
        };
        uniform(c * k, k, &mut out);
        out.extend(std::iter::repeat_n(0.0, c));
        for _ in 0..self.config.blocks {
            uniform(c * c * k, c * k, &mut out);
            out.extend(std::iter::repeat_n(0.0, c));
            uniform(c * f2, f2, &mut out);
            out.extend(std::iter::repeat_n(0.0, c));
        }
        out.extend(std::iter::repeat_n(0.0, c * k + 1));
        Tensor::from_vec(out)
    }

    fn noise_features(&self, c_noise: f64) -> Tensor {
        let f = self.config.n_freqs;
        let mut feat = Vec::with_capacity(2 * f);
        for i in 0..f {
            let w = std::f64::consts::TAU * 2f64.powi(i as i32) * 0.25;
            feat.push((w * c_noise).sin());
            feat.push((w * c_noise).cos());
        }
        Tensor::new(vec![2 * f, 1], feat).expect("feature shape matches data")
    }

    /// Denoised estimate of the clean signal on the tape. Gradients flow to
    /// both `params` and `z`.
    pub fn denoise_var<'t>(
        &self,
        tape: &'t Tape,
        params: Var<'t>,
        z: Var<'t>,
        sigma: f64,
    ) -> Result<Var<'t>> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "denoiser",
                format!("{} params, want {}", params.len(), self.param_count()),
            ));
        }
        if sigma <= 0.0 {
            return Err(Error::invalid("denoiser: sigma must be positive"));
        }
        let c = self.config.channels;
        let k = self.config.kernel;
        let f2 = 2 * self.config.n_freqs;
        let len = z.len();
        let (c_skip, c_out, c_in, c_noise) = preconditioning(sigma, self.config.sigma_data);

        let mut off = 0;
        let mut slice = |n: usize, shape: &[usize]| -> Result<Var<'t>> {
            let v = params.slice_rows(off, n)?.reshape(shape)?;
            off += n;
            Ok(v)
        };
        let w_in = slice(c * k, &[c, 1, k])?;
        let b_in = slice(c, &[c])?;
        let feat = tape.leaf(self.noise_features(c_noise))?;

        let mut h = z.scale(c_in)?.reshape(&[1, len])?.conv1d(w_in, Some(b_in), 1)?;
        for _ in 0..self.config.blocks {
            let w = slice(c * c * k, &[c, c, k])?;
            let b = slice(c, &[c])?;
            let ew = slice(c * f2, &[c, f2])?;
            let eb = slice(c, &[c])?;
            let e = ew.matmul(feat)?.reshape(&[c])?.add(eb)?;
            let branch = h.add_channel_bias(e)?.silu()?.conv1d(w, Some(b), 1)?;
            h = h.add(branch)?;
        }
        let w_out = slice(c * k, &[1, c, k])?;
        let b_out = slice(1, &[1])?;
        let refined = h.silu()?.conv1d(w_out, Some(b_out), 1)?.reshape(&[len])?;
        z.scale(c_skip)?.add(refined.scale(c_out)?)
    }
}

/// A denoiser with trained parameters; scores via (D(z, tau) - z) / tau^2.
#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    net: DenoiserNet,
    params: Tensor,
}

impl TrainedDenoiser {
    pub fn new(net: DenoiserNet, params: Tensor) -> Result<Self> {
        if params.len() != net.param_count() {
            return Err(Error::shape(
                "trained denoiser",
                format!("{} params, want {}", params.len(), net.param_count()),
            ));
        }
        Ok(TrainedDenoiser { net, params })
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    /// Plain denoised estimate.
    pub fn denoise(&self, z: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = tape.leaf(self.params.clone())?;
        let zv = tape.leaf(Tensor::from_vec(z.to_vec()))?;
        Ok(self.net.denoise_var(&tape, p, zv, sigma)?.value().into_data())
    }
}

impl ScoreModel for TrainedDenoiser {
    fn score_var<'t>(&self, tape: &'t Tape, z: Var<'t>, tau: f64) -> Result<Var<'t>> {
        if tau <= 0.0 {
            return Err(Error::invalid("denoiser score: tau must be positive"));
        }
        let p = tape.leaf(self.params.clone())?;
        let d = self.net.denoise_var(tape, p, z, tau)?;
        d.sub(z)?.scale(1.0 / (tau * tau))
    }
}
