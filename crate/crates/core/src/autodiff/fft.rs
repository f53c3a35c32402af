//! Cached FFT kernels backing the spectral tape primitives.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

struct PlanCache {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
    scratch: Vec<Complex<f64>>,
}

impl PlanCache {
    fn new() -> Self {
        PlanCache {
            planner: FftPlanner::new(),
            forward: HashMap::new(),
            inverse: HashMap::new(),
            scratch: Vec::new(),
        }
    }

    fn run(&mut self, buf: &mut [Complex<f64>], inverse: bool) {
        let n = buf.len();
        let map = if inverse { &mut self.inverse } else { &mut self.forward };
        let plan = map
            .entry(n)
            .or_insert_with(|| {
                if inverse {
                    self.planner.plan_fft_inverse(n)
                } else {
                    self.planner.plan_fft_forward(n)
                }
            })
            .clone();
        let need = plan.get_inplace_scratch_len();
        if self.scratch.len() < need {
            self.scratch.resize(need, Complex::new(0.0, 0.0));
        }
        plan.process_with_scratch(buf, &mut self.scratch[..need]);
    }
}

thread_local! {
    static CACHE: RefCell<PlanCache> = RefCell::new(PlanCache::new());
}

/// In-place unnormalized DFT: X[k] = sum_n x[n] e^{-2pi i kn/N}.
pub(crate) fn forward(buf: &mut [Complex<f64>]) {
    CACHE.with(|c| c.borrow_mut().run(buf, false));
}

/// In-place unnormalized inverse DFT: x[n] = sum_k X[k] e^{+2pi i kn/N}.
/// Divide by N for the normalized inverse.
pub(crate) fn inverse(buf: &mut [Complex<f64>]) {
    CACHE.with(|c| c.borrow_mut().run(buf, true));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_recovers_signal() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward(&mut buf);
        inverse(&mut buf);
        for (i, c) in buf.iter().enumerate() {
            assert!((c.re / n as f64 - x[i]).abs() < 1e-12);
            assert!((c.im / n as f64).abs() < 1e-12);
        }
    }
}
