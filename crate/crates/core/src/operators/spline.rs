//! Memoryless waveshaper: cubic Catmull-Rom spline on a fixed input grid.

use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Control point count for the waveshaper stage.
pub const SPLINE_POINTS: usize = 41;

/// Knot positions: uniform on [-1, 1].
pub fn spline_knots() -> Vec<f64> {
    (0..SPLINE_POINTS)
        .map(|i| -1.0 + 2.0 * i as f64 / (SPLINE_POINTS - 1) as f64)
        .collect()
}

/// Control values reproducing the identity map on the knot grid.
pub fn identity_spline_points() -> Vec<f64> {
    spline_knots()
}

fn check_count(points: &[f64]) -> Result<()> {
    if points.len() != SPLINE_POINTS {
        return Err(Error::shape(
            "ccr_spline_eval",
            format!("{} control points, want {}", points.len(), SPLINE_POINTS),
        ));
    }
    Ok(())
}

/// Spline evaluation on the tape; `points` must hold [`SPLINE_POINTS`]
/// values. Inputs beyond [-1, 1] extrapolate linearly with the boundary
/// slope, keeping the map C^1 everywhere.
pub fn ccr_spline_eval_var<'t>(points: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    if points.len() != SPLINE_POINTS {
        return Err(Error::shape(
            "ccr_spline_eval",
            format!("{} control points, want {}", points.len(), SPLINE_POINTS),
        ));
    }
    points.catmull_rom(x)
}

/// Plain evaluation without gradients.
pub fn ccr_spline_eval(points: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_count(points)?;
    let tape = Tape::new();
    let p = tape.leaf(Tensor::from_vec(points.to_vec()))?;
    let xs = tape.leaf(Tensor::from_vec(x.to_vec()))?;
    Ok(p.catmull_rom(xs)?.value().into_data())
}
