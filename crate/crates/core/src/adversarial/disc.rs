//! Log-mel spectrogram discriminator: a small 2-D conv stack over the mel
//! image of one STFT window size, reduced to a scalar realness score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::{LogMelConfig, LogMelPlan};
use crate::{Error, Result};

/// Architecture of one discriminator. Kernels are 3x3 with unit padding and
/// stride 2 along the time axis, followed by a leaky rectifier; the stack
/// ends in a global channel average and a linear head.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscConfig {
    pub window_len: usize,
    pub n_mels: usize,
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
}

impl DiscConfig {
    pub fn new(window_len: usize) -> Self {
        DiscConfig { window_len, n_mels: 64, channels: vec![16, 32, 64, 64], leaky_slope: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 8 || !self.window_len.is_power_of_two() {
            return Err(Error::config(format!(
                "discriminator window {} must be a power of two >= 8",
                self.window_len
            )));
        }
        if self.n_mels < 2 {
            return Err(Error::config("discriminator needs at least 2 mel bands"));
        }
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("discriminator channel widths must be nonzero"));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::config(format!("leaky slope {} invalid", self.leaky_slope)));
        }
        Ok(())
    }
}

/// One discriminator bound to a fixed segment length and sample rate, so the
/// log-mel plan is built once and reused every iteration.
pub struct Discriminator {
    cfg: DiscConfig,
    plan: LogMelPlan,
}

impl Discriminator {
    pub fn new(cfg: DiscConfig, sample_rate: f64, segment_len: usize) -> Result<Self> {
        cfg.validate()?;
        if segment_len < cfg.window_len {
            return Err(Error::config(format!(
                "segment length {} shorter than discriminator window {}",
                segment_len, cfg.window_len
            )));
        }
        let plan =
            LogMelPlan::new(&LogMelConfig::new(cfg.window_len, cfg.n_mels), sample_rate, segment_len)?;
        Ok(Discriminator { cfg, plan })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }

    /// Flat parameter length: conv kernels and biases per layer, then the
    /// linear head over the last channel block.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut cin = 1;
        for &cout in &self.cfg.channels {
            n += cout * cin * 9 + cout;
            cin = cout;
        }
        n + cin + 1
    }

    /// Deterministic scaled-normal kernels, zero biases, scaled head.
    pub fn init_params(&self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let mut data = Vec::with_capacity(self.param_count());
        let mut cin = 1;
        for &cout in &self.cfg.channels {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            for _ in 0..cout * cin * 9 {
                let g: f64 = normal.sample(&mut rng);
                data.push(std * g);
            }
            data.extend(std::iter::repeat(0.0).take(cout));
            cin = cout;
        }
        let std = (1.0 / cin as f64).sqrt();
        for _ in 0..cin {
            let g: f64 = normal.sample(&mut rng);
            data.push(std * g);
        }
        data.push(0.0);
        Tensor::from_vec(data)
    }

    /// Scalar score of one segment, shape [1] on the tape. Gradients flow to
    /// both the parameters and the segment, so the same graph serves the
    /// discriminator and operator updates.
    pub fn score_var<'t>(&self, tape: &'t Tape, params: Var<'t>, segment: Var<'t>) -> Result<Var<'t>> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "discriminator score",
                format!("{} params, want {}", params.len(), self.param_count()),
            ));
        }
        let mel = self.plan.log_mel_var(tape, segment)?;
        let (m, f) = (self.plan.n_mels(), self.plan.n_frames());
        let mut h = mel.reshape(&[1, m, f])?;
        let mut offset = 0;
        let mut cin = 1;
        for &cout in &self.cfg.channels {
            let w = params.slice_rows(offset, cout * cin * 9)?.reshape(&[cout, cin, 3, 3])?;
            offset += cout * cin * 9;
            let b = params.slice_rows(offset, cout)?;
            offset += cout;
            h = h.conv2d(w, Some(b), (1, 2), (1, 1))?.leaky_relu(self.cfg.leaky_slope)?;
            cin = cout;
        }
        let shape = h.shape();
        let spatial = shape[1] * shape[2];
        let flat = h.reshape(&[cin, spatial])?;
        let pool = tape.leaf(Tensor::new(vec![spatial, 1], vec![1.0 / spatial as f64; spatial])?)?;
        let pooled = flat.matmul(pool)?;
        let head_w = params.slice_rows(offset, cin)?.reshape(&[1, cin])?;
        offset += cin;
        let head_b = params.slice_rows(offset, 1)?;
        head_w.matmul(pooled)?.reshape(&[1])?.add(head_b)
    }

    /// Forward-only score of a raw segment.
    pub fn score(&self, params: &Tensor, segment: &[f64]) -> Result<f64> {
        let tape = Tape::new();
        let p = tape.leaf(params.clone())?;
        let x = tape.leaf(Tensor::from_vec(segment.to_vec()))?;
        self.score_var(&tape, p, x)?.item()
    }
}
