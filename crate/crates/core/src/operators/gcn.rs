//! Black-box distortion model: gated convolutional network.
//!
//! A stack of dilated causal conv layers. Each layer filters its input twice,
//! passes one branch through tanh and the other through a sigmoid gate,
//! multiplies them, and mixes channels with a 1x1 conv. The mix output feeds
//! the next layer and also accumulates into a skip sum that a final 1x1
//! projection collapses to one channel.

use super::OperatorModel;
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GcnConfig {
    pub layers: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig { layers: 8, channels: 12, kernel: 3 }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.kernel == 0 {
            return Err(Error::config("gcn layers, channels, and kernel must be positive"));
        }
        Ok(())
    }

    /// Dilation of layer `l`, doubling per layer.
    pub fn dilation(&self, l: usize) -> usize {
        1 << l
    }

    /// Causal receptive field in samples.
    pub fn receptive_field(&self) -> usize {
        let spread: usize = (0..self.layers).map(|l| (self.kernel - 1) * self.dilation(l)).sum();
        spread + 1
    }
}

#[derive(Debug, Clone)]
pub struct GcnOperator {
    config: GcnConfig,
}

impl GcnOperator {
    pub fn new(config: GcnConfig) -> Result<Self> {
        config.validate()?;
        Ok(GcnOperator { config })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }
}

impl OperatorModel for GcnOperator {
    fn kind(&self) -> &'static str {
        "gcn"
    }

    /// Input 1x1 conv (C + C), per layer two dilated convs (C*C*K + C each)
    /// plus a 1x1 mix (C*C + C), and a 1x1 output projection (C + 1).
    fn param_count(&self) -> usize {
        let (c, k) = (self.config.channels, self.config.kernel);
        let per_layer = 2 * (c * c * k + c) + c * c + c;
        2 * c + self.config.layers * per_layer + c + 1
    }

    /// Weights are uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]. Biases are
    /// zero except the gate bias, which starts at one so gates begin open.
    /// The output projection starts at zero, so the initial map is zero.
    fn init_params(&self, seed: u64) -> Tensor {
        let (c, k) = (self.config.channels, self.config.kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.param_count());
        let mut uniform = |n: usize, fan_in: usize, out: &mut Vec<f64>| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..n {
                out.push((rng.random::<f64>() * 2.0 - 1.0) * s);
            }
        };
        uniform(c, 1, &mut out);
        out.extend(std::iter::repeat_n(0.0, c));
        for _ in 0..self.config.layers {
            uniform(c * c * k, c * k, &mut out);
            out.extend(std::iter::repeat_n(0.0, c));
            uniform(c * c * k, c * k, &mut out);
            out.extend(std::iter::repeat_n(1.0, c));
            uniform(c * c, c, &mut out);
            out.extend(std::iter::repeat_n(0.0, c));
        }
        out.extend(std::iter::repeat_n(0.0, c + 1));
        Tensor::from_vec(out)
    }

    fn apply_var<'t>(&self, _tape: &'t Tape, params: Var<'t>, input: Var<'t>) -> Result<Var<'t>> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "gcn apply",
                format!("{} params, want {}", params.len(), self.param_count()),
            ));
        }
        let (c, k) = (self.config.channels, self.config.kernel);
        let len = input.len();
        let mut off = 0;
        let mut slice = |n: usize, shape: &[usize]| -> Result<Var<'t>> {
            let v = params.slice_rows(off, n)?.reshape(shape)?;
            off += n;
            Ok(v)
        };

        let w_in = slice(c, &[c, 1, 1])?;
        let b_in = slice(c, &[c])?;
        let mut h = input.reshape(&[1, len])?.conv1d(w_in, Some(b_in), 1)?;

        let mut skip: Option<Var<'t>> = None;
        for l in 0..self.config.layers {
            let wf = slice(c * c * k, &[c, c, k])?;
            let bf = slice(c, &[c])?;
            let wg = slice(c * c * k, &[c, c, k])?;
            let bg = slice(c, &[c])?;
            let wm = slice(c * c, &[c, c, 1])?;
            let bm = slice(c, &[c])?;
            let d = self.config.dilation(l);
            let f = h.conv1d(wf, Some(bf), d)?.tanh()?;
            let g = h.conv1d(wg, Some(bg), d)?.sigmoid()?;
            let m = f.mul(g)?.conv1d(wm, Some(bm), 1)?;
            skip = Some(match skip {
                Some(s) => s.add(m)?,
                None => m,
            });
            h = m;
        }
        let w_out = slice(c, &[1, c, 1])?;
        let b_out = slice(1, &[1])?;
        skip
            .expect("layer count is validated positive")
            .conv1d(w_out, Some(b_out), 1)?
            .reshape(&[len])
    }
}
