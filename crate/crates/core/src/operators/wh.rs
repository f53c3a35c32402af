//! Gray-box distortion model: filter, waveshaper, filter in series.
//!
//! Each filter stage owns magnitudes on a third-octave grid (positive via a
//! softplus map) and free phases on every FFT bin. Between the stages a
//! Catmull-Rom spline shapes the waveform sample by sample. Inputs hotter
//! than full scale are scaled down into the spline's grid range; that gain
//! belongs to the first filter stage and is not undone afterwards.

use super::eq::{eq_apply_var, interp_matrix, third_octave_grid};
use super::spline::{ccr_spline_eval_var, identity_spline_points, SPLINE_POINTS};
use super::OperatorModel;
use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::{StftConfig, StftPlan};
use crate::{Error, Result};

/// Raw value that the positivity map sends to exactly 1.
pub fn unit_mag_raw() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

#[derive(Debug, Clone)]
pub struct WhOperator {
    sample_rate: f64,
    stft: StftConfig,
    grid: Vec<f64>,
    interp: Tensor,
}

/// Parameter views in declaration order:
/// eq1 raw mags, eq1 phases, spline points, eq2 raw mags, eq2 phases.
#[derive(Debug, Clone, PartialEq)]
pub struct WhParams {
    pub eq1_mags_raw: Vec<f64>,
    pub eq1_phases: Vec<f64>,
    pub spline_points: Vec<f64>,
    pub eq2_mags_raw: Vec<f64>,
    pub eq2_phases: Vec<f64>,
}

impl WhOperator {
    pub fn new(sample_rate: f64) -> Result<Self> {
        Self::with_stft(sample_rate, StftConfig::default())
    }

    pub fn with_stft(sample_rate: f64, stft: StftConfig) -> Result<Self> {
        stft.validate()?;
        let grid = third_octave_grid(sample_rate);
        let interp = interp_matrix(&grid, stft.n_bins(), sample_rate)?;
        Ok(WhOperator { sample_rate, stft, grid, interp })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    fn n_bins(&self) -> usize {
        self.stft.n_bins()
    }

    /// Splits a flat parameter tensor into the typed view.
    pub fn unflatten(&self, flat: &Tensor) -> Result<WhParams> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(
                "wh params",
                format!("{} values, want {}", flat.len(), self.param_count()),
            ));
        }
        let (g, b) = (self.grid_len(), self.n_bins());
        let d = flat.data();
        let mut off = 0;
        let mut take = |n: usize| {
            let s = d[off..off + n].to_vec();
            off += n;
            s
        };
        Ok(WhParams {
            eq1_mags_raw: take(g),
            eq1_phases: take(b),
            spline_points: take(SPLINE_POINTS),
            eq2_mags_raw: take(g),
            eq2_phases: take(b),
        })
    }

    pub fn flatten(&self, p: &WhParams) -> Result<Tensor> {
        let (g, b) = (self.grid_len(), self.n_bins());
        if p.eq1_mags_raw.len() != g
            || p.eq2_mags_raw.len() != g
            || p.eq1_phases.len() != b
            || p.eq2_phases.len() != b
            || p.spline_points.len() != SPLINE_POINTS
        {
            return Err(Error::shape("wh params", "field lengths do not match the grid"));
        }
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(&p.eq1_mags_raw);
        flat.extend_from_slice(&p.eq1_phases);
        flat.extend_from_slice(&p.spline_points);
        flat.extend_from_slice(&p.eq2_mags_raw);
        flat.extend_from_slice(&p.eq2_phases);
        Ok(Tensor::from_vec(flat))
    }
}

impl OperatorModel for WhOperator {
    fn kind(&self) -> &'static str {
        "wiener-hammerstein"
    }

    fn param_count(&self) -> usize {
        2 * self.grid_len() + 2 * self.n_bins() + SPLINE_POINTS
    }

    /// Identity map: unit magnitudes, zero phases, identity spline.
    fn init_params(&self, _seed: u64) -> Tensor {
        let p = WhParams {
            eq1_mags_raw: vec![unit_mag_raw(); self.grid_len()],
            eq1_phases: vec![0.0; self.n_bins()],
            spline_points: identity_spline_points(),
            eq2_mags_raw: vec![unit_mag_raw(); self.grid_len()],
            eq2_phases: vec![0.0; self.n_bins()],
        };
        self.flatten(&p).expect("identity parameters match model dimensions")
    }

    fn apply_var<'t>(&self, tape: &'t Tape, params: Var<'t>, input: Var<'t>) -> Result<Var<'t>> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "wh apply",
                format!("{} params, want {}", params.len(), self.param_count()),
            ));
        }
        let (g, b) = (self.grid_len(), self.n_bins());
        let eq1_raw = params.slice_rows(0, g)?;
        let ph1 = params.slice_rows(g, b)?;
        let spline = params.slice_rows(g + b, SPLINE_POINTS)?;
        let eq2_raw = params.slice_rows(g + b + SPLINE_POINTS, g)?;
        let ph2 = params.slice_rows(2 * g + b + SPLINE_POINTS, b)?;

        let plan = StftPlan::new(self.stft, input.len())?;
        let u = eq_apply_var(tape, input, eq1_raw.softplus()?, ph1, &self.interp, &plan)?;
        // Scale into the spline grid when the peak exceeds full scale; the
        // factor is part of the first filter's gain, so it stays applied.
        let inv_peak = u.max_abs()?.clamp_min(1.0)?.pow(-1.0)?;
        let shaped = ccr_spline_eval_var(spline, u.mul_scalar(inv_peak)?)?;
        eq_apply_var(tape, shaped, eq2_raw.softplus()?, ph2, &self.interp, &plan)
    }
}
