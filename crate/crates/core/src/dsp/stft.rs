//! Short-time Fourier analysis and resynthesis.
//!
//! Two parallel paths share the same conventions: plain functions on slices
//! for metrics, and [`StftPlan`] methods that build tape ops for gradients.
//! Frames are padded by `window_len - hop` on both sides so reconstruction
//! divides by the exact window envelope and reproduces every sample.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::signal::Signal;
use super::window::{inverse_envelope, ola_envelope, periodic_hann};
use crate::autodiff::{fft, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    /// 2048-sample Hann window, 75% overlap, zero-padded to twice the
    /// window length.
    fn default() -> Self {
        StftConfig { window_len: 2048, hop: 512, fft_len: 4096 }
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize, fft_len: usize) -> Result<Self> {
        let cfg = StftConfig { window_len, hop, fft_len };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::config(format!(
                "hop {} must be in 1..=window_len {}",
                self.hop, self.window_len
            )));
        }
        if self.window_len > self.fft_len || self.fft_len % 2 != 0 {
            return Err(Error::config(format!(
                "fft_len {} must be even and >= window_len {}",
                self.fft_len, self.window_len
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub(crate) fn pad(&self) -> usize {
        self.window_len - self.hop
    }

    /// Frame count covering the padded signal.
    pub fn n_frames(&self, signal_len: usize) -> Result<usize> {
        if signal_len < self.window_len {
            return Err(Error::invalid(format!(
                "signal length {} shorter than window {}",
                signal_len, self.window_len
            )));
        }
        let padded = signal_len + 2 * self.pad();
        Ok((padded - self.window_len).div_ceil(self.hop) + 1)
    }
}

/// Precomputed window and envelope for one (config, signal length) pair.
/// Construction fails if the window/hop pair cannot reconstruct.
pub struct StftPlan {
    config: StftConfig,
    signal_len: usize,
    n_frames: usize,
    window: Arc<Vec<f64>>,
    inv_env: Arc<Vec<f64>>,
}

impl StftPlan {
    pub fn new(config: StftConfig, signal_len: usize) -> Result<Self> {
        config.validate()?;
        let n_frames = config.n_frames(signal_len)?;
        let window = periodic_hann(config.window_len);
        let env = ola_envelope(&window, config.hop, n_frames);
        let mut inv = inverse_envelope(&env, config.pad(), signal_len)?;
        // Inverse frames carry the full fft length, so the overlap-add span
        // extends past the window envelope; those positions are trimmed.
        inv.resize((n_frames - 1) * config.hop + config.fft_len, 0.0);
        Ok(StftPlan {
            config,
            signal_len,
            n_frames,
            window: Arc::new(window),
            inv_env: Arc::new(inv),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    /// Signal [len] -> onesided spectrum [2, n_frames, n_bins] on the tape.
    pub fn stft_var<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        if x.len() != self.signal_len {
            return Err(Error::shape(
                "stft",
                format!("planned for length {}, got {}", self.signal_len, x.len()),
            ));
        }
        x.frame_signal(self.window.clone(), self.config.hop, self.config.pad(), self.n_frames)?
            .rdft(self.config.fft_len)
    }

    /// Spectrum [2, n_frames, n_bins] -> signal [len] on the tape.
    pub fn istft_var<'t>(&self, spec: Var<'t>) -> Result<Var<'t>> {
        spec.irdft(self.config.fft_len)?.overlap_add(
            self.config.hop,
            self.config.pad(),
            self.signal_len,
            self.inv_env.clone(),
        )
    }
}

/// Complex spectrogram stored bin-major: re/im of shape [n_bins, n_frames].
#[derive(Debug, Clone)]
pub struct Spectrogram {
    re: Tensor,
    im: Tensor,
    config: StftConfig,
    sample_rate: f64,
    signal_len: usize,
}

impl Spectrogram {
    pub fn re(&self) -> &Tensor {
        &self.re
    }

    pub fn im(&self) -> &Tensor {
        &self.im
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn n_bins(&self) -> usize {
        self.re.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.re.shape()[1]
    }

    /// |Z| per (bin, frame), bin-major.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&r, &i)| (r * r + i * i).sqrt())
            .collect()
    }
}

/// Windowed onesided DFT of the padded signal.
pub fn stft(signal: &Signal, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let l = signal.len();
    let n_frames = config.n_frames(l)?;
    let window = periodic_hann(config.window_len);
    let bins = config.n_bins();
    let pad = config.pad();
    let x = signal.samples();
    let mut re = vec![0.0; bins * n_frames];
    let mut im = vec![0.0; bins * n_frames];
    let mut buf = vec![Complex::new(0.0, 0.0); config.fft_len];
    for f in 0..n_frames {
        let base = f * config.hop;
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(0.0, 0.0);
            if n < config.window_len {
                let t = base + n;
                if t >= pad && t - pad < l {
                    *b = Complex::new(window[n] * x[t - pad], 0.0);
                }
            }
        }
        fft::forward(&mut buf);
        for k in 0..bins {
            re[k * n_frames + f] = buf[k].re;
            im[k * n_frames + f] = buf[k].im;
        }
    }
    Ok(Spectrogram {
        re: Tensor::new(vec![bins, n_frames], re)?,
        im: Tensor::new(vec![bins, n_frames], im)?,
        config: *config,
        sample_rate: signal.sample_rate(),
        signal_len: l,
    })
}

/// Envelope-normalized overlap-add resynthesis, truncated or zero-padded to
/// `target_len`.
pub fn istft(spec: &Spectrogram, target_len: usize) -> Result<Signal> {
    let cfg = &spec.config;
    let n_frames = spec.n_frames();
    let bins = spec.n_bins();
    if bins != cfg.n_bins() {
        return Err(Error::shape("istft", format!("bins {} vs config {}", bins, cfg.n_bins())));
    }
    let l = spec.signal_len;
    let window = periodic_hann(cfg.window_len);
    let env = ola_envelope(&window, cfg.hop, n_frames);
    let inv = inverse_envelope(&env, cfg.pad(), l)?;

    let mut acc = vec![0.0; (n_frames - 1) * cfg.hop + cfg.fft_len];
    let half = cfg.fft_len / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_len];
    let red = spec.re.data();
    let imd = spec.im.data();
    for f in 0..n_frames {
        buf[0] = Complex::new(red[f], 0.0);
        buf[half] = Complex::new(red[half * n_frames + f], 0.0);
        for k in 1..half {
            let c = Complex::new(red[k * n_frames + f], imd[k * n_frames + f]);
            buf[k] = c;
            buf[cfg.fft_len - k] = c.conj();
        }
        fft::inverse(&mut buf);
        let inv_n = 1.0 / cfg.fft_len as f64;
        let base = f * cfg.hop;
        for (n, b) in buf.iter().enumerate() {
            acc[base + n] += b.re * inv_n;
        }
    }

    let mut out = vec![0.0; target_len];
    let pad = cfg.pad();
    for (t, o) in out.iter_mut().enumerate().take(target_len.min(l)) {
        *o = acc[pad + t] * inv[pad + t];
    }
    Signal::new(out, spec.sample_rate)
}
