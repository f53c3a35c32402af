//! Analysis windows and overlap-add envelopes.

use crate::{Error, Result};

/// Periodic Hann window: w[j] = 0.5 (1 - cos(2 pi j / len)). The periodic
/// form sums to an exact constant under overlap-add at hop = len/4 or len/2.
pub fn periodic_hann(len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|j| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / n).cos()))
        .collect()
}

/// Per-position sum of overlapped window copies at the given hop, over the
/// padded span `(n_frames - 1) * hop + len(window)`.
pub fn ola_envelope(window: &[f64], hop: usize, n_frames: usize) -> Vec<f64> {
    let w = window.len();
    let mut env = vec![0.0; (n_frames - 1) * hop + w];
    for f in 0..n_frames {
        let base = f * hop;
        for (j, &wv) in window.iter().enumerate() {
            env[base + j] += wv;
        }
    }
    env
}

/// Reciprocal envelope restricted to the trimmed region
/// `[pad_left, pad_left + target_len)`; zero elsewhere (those positions are
/// never read back). Errors if the envelope nearly vanishes anywhere in the
/// trimmed region, i.e. the window/hop pair cannot reconstruct.
pub fn inverse_envelope(
    env: &[f64],
    pad_left: usize,
    target_len: usize,
) -> Result<Vec<f64>> {
    let mut inv = vec![0.0; env.len()];
    for t in pad_left..pad_left + target_len {
        if env[t] < 1e-6 {
            return Err(Error::config(format!(
                "window/hop violates overlap-add coverage: envelope {} at position {}",
                env[t], t
            )));
        }
        inv[t] = 1.0 / env[t];
    }
    Ok(inv)
}
