//! Mel filterbanks and log-mel spectrograms.

use super::signal::Signal;
use super::stft::{stft, StftConfig, StftPlan};
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Magnitudes below this are treated as silence before any log.
pub const LOG_MAG_FLOOR: f64 = 1e-5;

/// 2595 log10(1 + f/700).
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over onesided FFT bins, uniformly spaced on the mel
/// scale between fmin and fmax.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Tensor,
    fmin: f64,
    fmax: f64,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_bins: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Result<Self> {
        if n_mels == 0 || n_bins < 2 {
            return Err(Error::config("mel filterbank needs n_mels >= 1 and n_bins >= 2"));
        }
        if !(0.0 <= fmin && fmin < fmax && fmax <= sample_rate / 2.0 + 1e-9) {
            return Err(Error::config(format!(
                "mel range {fmin}..{fmax} invalid for sample rate {sample_rate}"
            )));
        }
        let fft_len = 2 * (n_bins - 1);
        let m_lo = hz_to_mel(fmin);
        let m_hi = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sample_rate / fft_len as f64;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= c {
                    (f - lo) / (c - lo)
                } else {
                    (hi - f) / (hi - c)
                };
                weights[m * n_bins + k] = w;
            }
        }
        // Every bin strictly inside (fmin, fmax) must be heard by some
        // filter; a violation means n_mels is too small for the bin grid.
        for k in 0..n_bins {
            let f = k as f64 * sample_rate / fft_len as f64;
            if f > fmin && f < fmax {
                let total: f64 = (0..n_mels).map(|m| weights[m * n_bins + k]).sum();
                if total <= 0.0 {
                    return Err(Error::config(format!(
                        "mel filterbank leaves bin {k} ({f:.1} Hz) uncovered"
                    )));
                }
            }
        }
        Ok(MelFilterbank { weights: Tensor::new(vec![n_mels, n_bins], weights)?, fmin, fmax })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_bins(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn fmin(&self) -> f64 {
        self.fmin
    }

    pub fn fmax(&self) -> f64 {
        self.fmax
    }
}

/// Log-mel analysis settings: Hann window of `window_len`, hop a quarter
/// window, FFT length equal to the window.
#[derive(Debug, Clone, Copy)]
pub struct LogMelConfig {
    pub window_len: usize,
    pub n_mels: usize,
    pub fmin: f64,
}

impl LogMelConfig {
    pub fn new(window_len: usize, n_mels: usize) -> Self {
        LogMelConfig { window_len, n_mels, fmin: 20.0 }
    }

    pub fn stft_config(&self) -> Result<StftConfig> {
        StftConfig::new(self.window_len, self.window_len / 4, self.window_len)
    }

    pub fn filterbank(&self, sample_rate: f64) -> Result<MelFilterbank> {
        let bins = self.window_len / 2 + 1;
        MelFilterbank::new(self.n_mels, bins, sample_rate, self.fmin, sample_rate / 2.0)
    }
}

/// Shared plan for repeated log-mel evaluations at one signal length.
pub struct LogMelPlan {
    stft: StftPlan,
    bank: MelFilterbank,
}

impl LogMelPlan {
    pub fn new(cfg: &LogMelConfig, sample_rate: f64, signal_len: usize) -> Result<Self> {
        Ok(LogMelPlan {
            stft: StftPlan::new(cfg.stft_config()?, signal_len)?,
            bank: cfg.filterbank(sample_rate)?,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.bank.n_mels()
    }

    pub fn n_frames(&self) -> usize {
        self.stft.n_frames()
    }

    /// Natural-log mel magnitudes [n_mels, n_frames] on the tape.
    ///
    /// A tiny power bias keeps the magnitude differentiable at silence; the
    /// explicit floor then dominates anything that small.
    pub fn log_mel_var<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let spec = self.stft.stft_var(x)?;
        let (f, b) = (self.stft.n_frames(), self.stft.n_bins());
        let re = spec.slice_rows(0, 1)?.reshape(&[f, b])?;
        let im = spec.slice_rows(1, 1)?.reshape(&[f, b])?;
        let power = re.mul(re)?.add(im.mul(im)?)?;
        let mag = power.add_const(1e-20)?.sqrt()?;
        let weights = tape.leaf(self.bank.weights().clone())?;
        let mel = weights.matmul(mag.transpose2d()?)?;
        mel.clamp_min(LOG_MAG_FLOOR)?.log()
    }
}

/// Plain log-mel: [n_mels, n_frames] tensor without a tape.
pub fn log_mel(signal: &Signal, cfg: &LogMelConfig) -> Result<Tensor> {
    let spec = stft(signal, &cfg.stft_config()?)?;
    let bank = cfg.filterbank(signal.sample_rate())?;
    let (n_mels, n_bins) = (bank.n_mels(), bank.n_bins());
    let n_frames = spec.n_frames();
    let mags = spec.magnitudes();
    let w = bank.weights().data();
    let mut out = vec![0.0; n_mels * n_frames];
    for m in 0..n_mels {
        for k in 0..n_bins {
            let wv = w[m * n_bins + k];
            if wv == 0.0 {
                continue;
            }
            let mrow = &mags[k * n_frames..(k + 1) * n_frames];
            let orow = &mut out[m * n_frames..(m + 1) * n_frames];
            for f in 0..n_frames {
                orow[f] += wv * mrow[f];
            }
        }
    }
    for v in &mut out {
        *v = v.max(LOG_MAG_FLOOR).ln();
    }
    Tensor::new(vec![n_mels, n_frames], out)
}
