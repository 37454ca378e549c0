//! Brute-force verification tools: Picard fixed-point solvers (plain and
//! projected) and finite-difference gradient checks. These are the
//! independent routes against which closed-form oracles and analytic
//! gradients are audited.

use nalgebra::DVector;

use crate::operators::{OperatorError, ProjectionRegion};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_CAP: usize = 100_000;

/// Result of a fixed-point solve. `converged` implies `residual <= tol`;
/// when the iteration cap is reached the best point found is returned with
/// `converged = false`. The residual history allows auditing the per-step
/// contraction factor.
#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub point: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

/// Picard iteration `x <- f(x, y)` until `|f(x,y) - x| <= tol` or the cap is
/// reached. `f` must be contractive in `x` (declared by the caller).
pub fn picard_fixed_point<F>(
    f_map: F,
    y: &DVector<f64>,
    x_init: &DVector<f64>,
    tol: f64,
    cap: usize,
) -> FixedPointResult
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    assert!(tol > 0.0, "tolerance must be positive");
    let mut x = x_init.clone();
    let mut history = Vec::new();
    for iterations in 1..=cap {
        let next = f_map(&x, y);
        let residual = (&next - &x).norm();
        history.push(residual);
        x = next;
        if residual <= tol {
            return FixedPointResult {
                point: x,
                residual,
                iterations,
                converged: true,
                residual_history: history,
            };
        }
    }
    let residual = *history.last().unwrap_or(&f64::INFINITY);
    FixedPointResult { point: x, residual, iterations: cap, converged: false, residual_history: history }
}

/// Projected Picard iteration `x <- P(f(x, y))`; the convergence certificate
/// is `|P(f(x,y)) - x| <= tol`.
pub fn projected_picard<F>(
    f_map: F,
    region: &ProjectionRegion,
    y: &DVector<f64>,
    x_init: &DVector<f64>,
    tol: f64,
    cap: usize,
) -> Result<FixedPointResult, OperatorError>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    assert!(tol > 0.0, "tolerance must be positive");
    let mut x = region.project(x_init)?;
    let mut history = Vec::new();
    for iterations in 1..=cap {
        let mut next = f_map(&x, y);
        region.project_in_place(&mut next)?;
        let residual = (&next - &x).norm();
        history.push(residual);
        x = next;
        if residual <= tol {
            return Ok(FixedPointResult {
                point: x,
                residual,
                iterations,
                converged: true,
                residual_history: history,
            });
        }
    }
    let residual = *history.last().unwrap_or(&f64::INFINITY);
    Ok(FixedPointResult {
        point: x,
        residual,
        iterations: cap,
        converged: false,
        residual_history: history,
    })
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad<F>(scalar_fn: F, point: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut grad = DVector::zeros(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let up = scalar_fn(&probe);
        probe[i] = point[i] - h;
        let down = scalar_fn(&probe);
        probe[i] = point[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}
