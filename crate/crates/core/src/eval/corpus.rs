//! Deterministic synthetic corpora used to exercise the estimators without
//! shipping audio fixtures. Every generator is seeded and bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Signal};

/// Peak value every generated segment is normalized to.
pub const CORPUS_PEAK: f64 = 0.9;

/// Lag-1 feedback used by the colored-noise generator.
pub const AR1_COEFF: f64 = 0.9;

/// Family of synthetic program material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusKind {
    /// Colored Gaussian noise with lag-1 feedback 0.9.
    Ar1,
    /// Damped plucked-string tones at random pitches.
    Pluck,
    /// Each segment is half one family, half the other, in random order.
    Mixture,
}

impl CorpusKind {
    pub fn name(&self) -> &'static str {
        match self {
            CorpusKind::Ar1 => "ar1",
            CorpusKind::Pluck => "pluck",
            CorpusKind::Mixture => "mixture",
        }
    }
}

fn normalize_peak(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let g = CORPUS_PEAK / peak;
        for v in samples.iter_mut() {
            *v *= g;
        }
    }
}

fn ar1_segment(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut state = 0.0f64;
    let innovation = (1.0 - AR1_COEFF * AR1_COEFF).sqrt();
    for _ in 0..len {
        let e: f64 = rng.sample(StandardNormal);
        state = AR1_COEFF * state + innovation * e;
        out.push(state);
    }
    out
}

fn pluck_segment(len: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0f64; len];
    let n_notes = 2 + rng.random_range(0..3usize);
    for _ in 0..n_notes {
        // Log-uniform pitch between 82 Hz and 440 Hz.
        let lo = 82.0f64.ln();
        let hi = 440.0f64.ln();
        let f0 = (lo + (hi - lo) * rng.random::<f64>()).exp();
        let period = ((sample_rate / f0).round() as usize).max(2);
        let onset = rng.random_range(0..(len / 2).max(1));
        let amp = 0.5 + 0.5 * rng.random::<f64>();

        // Feedback comb seeded with a noise burst; averaging two taps damps
        // the high partials so the tone decays like a struck string.
        let mut buf: Vec<f64> = (0..period)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut head = 0usize;
        for t in onset..len {
            let next = (head + 1) % period;
            let v = 0.5 * (buf[head] + buf[next]) * 0.998;
            out[t] += amp * v;
            buf[head] = v;
            head = next;
        }
    }
    out
}

fn segment(kind: CorpusKind, len: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match kind {
        CorpusKind::Ar1 => ar1_segment(len, rng),
        CorpusKind::Pluck => pluck_segment(len, sample_rate, rng),
        CorpusKind::Mixture => {
            let half = len / 2;
            let mut a = ar1_segment(half, rng);
            let mut b = pluck_segment(len - half, sample_rate, rng);
            if rng.random::<f64>() < 0.5 {
                std::mem::swap(&mut a, &mut b);
            }
            a.extend_from_slice(&b);
            a
        }
    }
}

/// Generate `n_segments` seeded segments of `seg_len` samples, each
/// peak-normalized to 0.9.
pub fn synth_corpus(
    kind: CorpusKind,
    n_segments: usize,
    seg_len: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<Signal>> {
    if n_segments == 0 || seg_len < 4 {
        return Err(Error::config(format!(
            "corpus needs at least one segment of at least 4 samples, got {n_segments} x {seg_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let mut s = segment(kind, seg_len, sample_rate, &mut rng);
        normalize_peak(&mut s);
        out.push(Signal::new(s, sample_rate)?);
    }
    Ok(out)
}
