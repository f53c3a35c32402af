//! Finite-difference gradient verification.
//!
//! These helpers drive a closure that rebuilds the computation from a flat
//! parameter vector, so they exercise the whole tape construction path and
//! not just a cached graph.

use crate::Result;

/// |a - b| / max(|a|, |b|, 1): absolute near zero, relative when large.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central-difference derivative of `f` in coordinate `i` at `x`.
pub fn central_diff(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    i: usize,
    h: f64,
) -> Result<f64> {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp)?;
    xp[i] = x[i] - h;
    let fm = f(&xp)?;
    Ok((fp - fm) / (2.0 * h))
}

/// Checks an analytic gradient against central differences coordinate by
/// coordinate. Returns the worst relative error.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64> {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let fd = central_diff(&mut f, x, i, h)?;
        worst = worst.max(rel_err(fd, analytic[i]));
    }
    Ok(worst)
}

/// Directional derivative along `dir` by central differences; cheap probe
/// for large parameter vectors where per-coordinate checks are infeasible.
pub fn directional_derivative(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    dir: &[f64],
    h: f64,
) -> Result<f64> {
    assert_eq!(x.len(), dir.len(), "direction length mismatch");
    let xp: Vec<f64> = x.iter().zip(dir).map(|(&a, &d)| a + h * d).collect();
    let xm: Vec<f64> = x.iter().zip(dir).map(|(&a, &d)| a - h * d).collect();
    Ok((f(&xp)? - f(&xm)?) / (2.0 * h))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_is_absolute_near_zero() {
        assert!((rel_err(1e-9, 0.0) - 1e-9).abs() < 1e-24);
    }

    #[test]
    fn rel_err_is_relative_when_large() {
        assert!((rel_err(200.0, 100.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_gradient_verifies() {
        // f(x) = sum x_i^2, grad = 2x
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum());
        let x = [1.0, -2.0, 0.5];
        let analytic = [2.0, -4.0, 1.0];
        let worst = check_gradient(f, &x, &analytic, 1e-5).unwrap();
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn directional_matches_dot_with_gradient() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v * v).sum());
        let x = [0.3, -0.7];
        let grad = [3.0 * 0.09, 3.0 * 0.49];
        let dir = [0.6, -0.8];
        let dd = directional_derivative(f, &x, &dir, 1e-5).unwrap();
        assert!(rel_err(dd, dot(&grad, &dir)) < 1e-8);
    }
}
