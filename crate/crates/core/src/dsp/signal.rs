//! Mono audio signal type.

use crate::{Error, Result};

/// Mono signal with finite samples and a positive sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate {sample_rate} must be positive")));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::non_finite("signal samples"));
        }
        Ok(Signal { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Same audio with samples replaced; rate is preserved.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Signal::new(samples, self.sample_rate)
    }

    /// Contiguous slice as a new signal.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() {
            return Err(Error::invalid(format!(
                "segment {}..{} out of signal length {}",
                start,
                start + len,
                self.samples.len()
            )));
        }
        Signal::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }
}
