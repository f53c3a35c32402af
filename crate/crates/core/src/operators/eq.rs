//! Linear filter stage: magnitudes on a third-octave grid, phases per bin.

use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::{Signal, StftConfig, StftPlan};
use crate::{Error, Result};

/// Third-octave band centers 1000 * 2^(k/3) whose bands (one sixth octave
/// each side) reach into (20 Hz, Nyquist), with 0 Hz and Nyquist appended
/// as interpolation anchors. Ascending, strictly increasing.
pub fn third_octave_grid(sample_rate: f64) -> Vec<f64> {
    let nyquist = sample_rate / 2.0;
    let half_band = 2f64.powf(1.0 / 6.0);
    let mut grid = vec![0.0];
    // k covers far past audio in both directions; the band test trims it.
    for k in -60i32..=60 {
        let c = 1000.0 * 2f64.powf(k as f64 / 3.0);
        if c >= nyquist {
            continue;
        }
        let (lo, hi) = (c / half_band, c * half_band);
        if hi > 20.0 && lo < nyquist {
            grid.push(c);
        }
    }
    grid.push(nyquist);
    grid
}

/// Linear interpolation weights from grid points to FFT bin frequencies:
/// dense [n_bins, grid_len] matrix, two nonzero weights per row.
pub fn interp_matrix(grid: &[f64], n_bins: usize, sample_rate: f64) -> Result<Tensor> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("interpolation grid must be strictly increasing"));
    }
    let fft_len = 2 * (n_bins - 1);
    let nyquist = sample_rate / 2.0;
    if (grid[0] - 0.0).abs() > 1e-9 || (grid[grid.len() - 1] - nyquist).abs() > 1e-9 {
        return Err(Error::config(format!(
            "grid must span 0..Nyquist, got {}..{}",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    let g = grid.len();
    let mut w = vec![0.0; n_bins * g];
    for k in 0..n_bins {
        let f = k as f64 * sample_rate / fft_len as f64;
        let seg = grid.partition_point(|&gp| gp <= f).min(g - 1).max(1) - 1;
        let t = (f - grid[seg]) / (grid[seg + 1] - grid[seg]);
        w[k * g + seg] = 1.0 - t;
        w[k * g + seg + 1] = t;
    }
    Tensor::new(vec![n_bins, g], w)
}

/// Filter application on the tape: interpolate grid magnitudes to all bins,
/// multiply every frame by mag * e^{i phase}, resynthesize.
pub fn eq_apply_var<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    mags_grid: Var<'t>,
    phases: Var<'t>,
    interp: &Tensor,
    plan: &StftPlan,
) -> Result<Var<'t>> {
    let bins = plan.n_bins();
    let g = interp.shape()[1];
    if mags_grid.len() != g {
        return Err(Error::shape(
            "eq_apply",
            format!("{} grid magnitudes, interpolation expects {}", mags_grid.len(), g),
        ));
    }
    if phases.len() != bins {
        return Err(Error::shape(
            "eq_apply",
            format!("{} phases, want one per bin ({})", phases.len(), bins),
        ));
    }
    let interp_leaf = tape.leaf(interp.clone())?;
    let mags = interp_leaf.matmul(mags_grid.reshape(&[g, 1])?)?.reshape(&[1, bins])?;
    let ph = phases.reshape(&[1, bins])?;
    let re = mags.mul(ph.cos()?)?;
    let im = mags.mul(ph.sin()?)?;
    let filter = re.concat_rows(im)?;
    let spec = plan.stft_var(x)?;
    let filtered = spec.complex_mul(filter.broadcast_frames(plan.n_frames())?)?;
    plan.istft_var(filtered)
}

/// One-shot filter application to a signal.
pub fn eq_apply(
    signal: &Signal,
    mags_grid: &[f64],
    phases: &[f64],
    stft_cfg: &StftConfig,
) -> Result<Signal> {
    let grid = third_octave_grid(signal.sample_rate());
    if mags_grid.len() != grid.len() {
        return Err(Error::shape(
            "eq_apply",
            format!("{} grid magnitudes for a {}-point grid", mags_grid.len(), grid.len()),
        ));
    }
    let plan = StftPlan::new(*stft_cfg, signal.len())?;
    let interp = interp_matrix(&grid, plan.n_bins(), signal.sample_rate())?;
    let tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(signal.samples().to_vec()))?;
    let m = tape.leaf(Tensor::from_vec(mags_grid.to_vec()))?;
    let p = tape.leaf(Tensor::from_vec(phases.to_vec()))?;
    let y = eq_apply_var(&tape, x, m, p, &interp, &plan)?;
    signal.with_samples(y.value().into_data())
}
