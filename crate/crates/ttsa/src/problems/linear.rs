//! Linear coupled system `A11 x + A12 y = b1`, `A21 x + A22 y = b2` with a
//! positive definite fast block and a rank-deficient PSD Schur complement
//! `Delta = A22 - A21 A11^{-1} A12` in the slow block, observed each step
//! through fresh i.i.d. Gaussian perturbations of every matrix and vector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{rng_from_seed, NoiseModel};
use crate::operators::{DriftPair, OperatorConstants};
use crate::problems::{BuildError, Instance, Problem, ProblemKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearInstance {
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub b2: DVector<f64>,
    pub planted_x: DVector<f64>,
    pub planted_y: DVector<f64>,
    pub delta: DMatrix<f64>,
    pub a11_inv: DMatrix<f64>,
    /// `b2 - A21 A11^{-1} b1`, the constant of the reduced slow residual.
    pub slow_shift: DVector<f64>,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub constants: OperatorConstants,
}

impl LinearInstance {
    /// Fixed point of the fast iteration: `x*(y) = A11^{-1}(b1 - A12 y)`.
    pub fn x_star(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.a11_inv * (&self.b1 - &self.a12 * y)
    }

    /// Slow residual evaluated at the oracle point, in reduced form:
    /// `A21 x*(y) + A22 y - b2 = Delta y - (b2 - A21 A11^{-1} b1)`.
    pub fn slow_residual_at_oracle(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.delta * y - &self.slow_shift
    }

    /// Raw slow residual `A21 x + A22 y - b2` at an arbitrary state.
    pub fn slow_residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.a21 * x + &self.a22 * y - &self.b2
    }

    pub fn dim(&self) -> usize {
        self.b1.len()
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn fill_standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn standard_normal_vector(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Builds the linear instance: `A11 = R D R^T` for a random orthogonal `R`
/// and diagonal `D` uniform on `[1,2)`; `Delta = W W^T / lambda_max` for a
/// Gaussian `d x rank` factor `W`; `A12 = A21 = I`; `A22 = A11^{-1} + Delta`;
/// `b1, b2` planted from a random solution. The matching noise model adds
/// fresh i.i.d. Gaussian entries to every matrix and vector each step.
pub fn build_linear(seed: u64, d: usize, delta_rank: usize) -> Result<Problem, BuildError> {
    if d == 0 {
        return Err(BuildError::EmptyDimension);
    }
    if delta_rank == 0 || delta_rank > d {
        return Err(BuildError::BadDeltaRank { rank: delta_rank, dim: d });
    }
    let mut rng = rng_from_seed(seed);

    // Orthogonalized Gaussian with sign-normalized columns.
    let gauss = fill_standard_normal(d, d, &mut rng);
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let diag = DVector::from_fn(d, |_, _| rng.random_range(1.0..2.0));
    let mut a11 = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    symmetrize(&mut a11);

    let w = fill_standard_normal(d, delta_rank, &mut rng);
    let mut delta = &w * w.transpose();
    symmetrize(&mut delta);
    let lambda_max = delta.clone().symmetric_eigen().eigenvalues.max();
    delta /= lambda_max;

    let a11_inv = a11
        .clone()
        .cholesky()
        .ok_or_else(|| BuildError::ConstructionIdentity("A11 not positive definite".into()))?
        .inverse();
    let a12 = DMatrix::identity(d, d);
    let a21 = DMatrix::identity(d, d);
    let mut a22 = &a11_inv + &delta;
    symmetrize(&mut a22);

    let planted_x = standard_normal_vector(d, &mut rng);
    let planted_y = standard_normal_vector(d, &mut rng);
    let b1 = &a11 * &planted_x + &a12 * &planted_y;
    let b2 = &a21 * &planted_x + &a22 * &planted_y;
    let x0 = standard_normal_vector(d, &mut rng);
    let y0 = standard_normal_vector(d, &mut rng);

    // Construction identities.
    let residual = (&a22 - &a21 * &a11_inv * &a12 - &delta).norm();
    if residual > 1e-8 {
        return Err(BuildError::ConstructionIdentity(format!(
            "A22 - A21 A11^-1 A12 differs from Delta by {residual}"
        )));
    }
    let planted_residual = ((&a11 * &planted_x + &a12 * &planted_y) - &b1).norm()
        + ((&a21 * &planted_x + &a22 * &planted_y) - &b2).norm();
    if planted_residual > 1e-8 {
        return Err(BuildError::ConstructionIdentity(format!(
            "planted solution residual {planted_residual}"
        )));
    }

    let eigs = a11.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eigs.min(), eigs.max());
    let mu = (hi - 1.0).max(1.0 - lo);
    let identity = DMatrix::<f64>::identity(d, d);
    let lipschitz = (mu + spectral_norm(&a21)).max(spectral_norm(&a12) + spectral_norm(&(&identity - &a22)));
    let delta_max = delta.clone().symmetric_eigen().eigenvalues.max();
    let constants = OperatorConstants {
        mu,
        lipschitz,
        rho: lo,
        cocoercivity: Some(1.0 / delta_max),
    };

    let slow_shift = &b2 - &a21 * (&a11_inv * &b1);
    Ok(assemble(LinearInstance {
        a11,
        a12,
        a21,
        a22,
        b1,
        b2,
        planted_x,
        planted_y,
        delta,
        a11_inv,
        slow_shift,
        x0,
        y0,
        constants,
    }))
}

pub(crate) fn assemble(inst: LinearInstance) -> Problem {
    let d = inst.dim();
    // A12 = A21 = I by construction; the hot drift paths use that directly.
    let (a11, b1) = (inst.a11.clone(), inst.b1.clone());
    let (a22, b2) = (inst.a22.clone(), inst.b2.clone());
    let drift = DriftPair::new(
        (d, d),
        inst.constants,
        None,
        move |x, y, out| {
            out.copy_from(&b1);
            out.gemv(-1.0, &a11, x, 1.0);
            *out -= y;
        },
        move |x, y, out| {
            out.copy_from(&b2);
            out.gemv(-1.0, &a22, y, 1.0);
            *out -= x;
        },
    );
    let init = (inst.x0.clone(), inst.y0.clone());
    Problem {
        kind: ProblemKind::Linear,
        drift,
        init,
        default_noise: NoiseModel::linear_perturbation(1.0),
        instance: Instance::Linear(inst),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::picard_fixed_point;

    #[test]
    fn construction_identities_hold() {
        let p = build_linear(7, 20, 5).unwrap();
        let inst = p.as_linear().unwrap();
        // Delta recovered from the blocks equals the stored Delta.
        let recon = &inst.a22 - &inst.a21 * &inst.a11_inv * &inst.a12;
        assert!((recon - &inst.delta).norm() < 1e-10);
        // Drifts vanish at the planted solution.
        let f = p.drift.fast_drift(&inst.planted_x, &inst.planted_y);
        let g = p.drift.slow_drift(&inst.planted_x, &inst.planted_y);
        assert!(f.norm() < 1e-8 && g.norm() < 1e-8);
    }

    #[test]
    fn delta_is_psd_rank_deficient_nonzero() {
        let p = build_linear(3, 20, 5).unwrap();
        let inst = p.as_linear().unwrap();
        let eigs = inst.delta.clone().symmetric_eigen().eigenvalues;
        assert!(eigs.min() > -1e-10, "Delta must be PSD");
        assert!(eigs.max() > 0.5, "Delta must be non-zero");
        let near_zero = eigs.iter().filter(|&&e| e.abs() < 1e-8).count();
        assert_eq!(near_zero, 15, "rank 5 out of 20");
        assert!((eigs.max() - 1.0).abs() < 1e-10, "normalized to unit top eigenvalue");
    }

    #[test]
    fn oracle_residual_reduction_matches_direct_evaluation() {
        let p = build_linear(11, 20, 5).unwrap();
        let inst = p.as_linear().unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let y = standard_normal_vector(20, &mut rng);
            let direct = inst.slow_residual(&inst.x_star(&y), &y);
            let reduced = inst.slow_residual_at_oracle(&y);
            assert!((direct - reduced).norm() < 1e-10);
        }
        // Planted solution and null-space shifts are exact zeros of the
        // reduced form.
        assert!(inst.slow_residual_at_oracle(&inst.planted_y).norm() < 1e-8);
        let eig = inst.delta.clone().symmetric_eigen();
        let mut null_dir = DVector::zeros(20);
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda.abs() < 1e-10 {
                null_dir = eig.eigenvectors.column(i).into_owned();
                break;
            }
        }
        assert!(null_dir.norm() > 0.5, "found a null direction");
        let shifted = &inst.planted_y + 3.0 * null_dir;
        assert!(inst.slow_residual_at_oracle(&shifted).norm() < 1e-8);
    }

    #[test]
    fn picard_agrees_with_direct_solve() {
        let p = build_linear(13, 20, 5).unwrap();
        let inst = p.as_linear().unwrap();
        let mut rng = rng_from_seed(23);
        let y = standard_normal_vector(20, &mut rng);
        let f = |x: &DVector<f64>, y: &DVector<f64>| p.drift.fast_map(x, y);
        let res = picard_fixed_point(f, &y, &DVector::zeros(20), 1e-12, 100_000);
        assert!(res.converged);
        assert!((res.point - inst.x_star(&y)).norm() < 1e-8);
    }

    #[test]
    fn slow_oracle_map_is_nonexpansive() {
        use crate::operators::{ball_sampler, probe_lipschitz, DEFAULT_PROBE_RADIUS};
        let p = build_linear(17, 20, 5).unwrap();
        let inst = p.as_linear().unwrap();
        let g_oracle = |y: &DVector<f64>| y - inst.slow_residual_at_oracle(y);
        let probe =
            probe_lipschitz(g_oracle, ball_sampler(20, DEFAULT_PROBE_RADIUS, 41), 2000);
        assert!(probe <= 1.0 + 1e-9);
    }

    #[test]
    fn fixed_point_map_lipschitz_audit() {
        let p = build_linear(23, 20, 5).unwrap();
        let inst = p.as_linear().unwrap();
        let bound = p.drift.constants.fixed_point_lipschitz();
        let mut rng = rng_from_seed(8);
        for _ in 0..1000 {
            let y1 = standard_normal_vector(20, &mut rng) * 5.0;
            let y2 = standard_normal_vector(20, &mut rng) * 5.0;
            let lhs = (inst.x_star(&y1) - inst.x_star(&y2)).norm();
            assert!(lhs <= bound * (y1 - y2).norm() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn rejects_bad_rank() {
        assert!(build_linear(1, 20, 0).is_err());
        assert!(build_linear(1, 20, 21).is_err());
        assert!(build_linear(1, 0, 1).is_err());
    }

    #[test]
    fn declared_constants_are_sound() {
        let p = build_linear(19, 20, 5).unwrap();
        let c = &p.drift.constants;
        assert!(c.mu > 0.0 && c.mu < 1.0);
        assert!(c.rho >= 1.0 - 1e-12);
        assert!((c.cocoercivity.unwrap() - 1.0).abs() < 1e-9);
        // Contraction of the step-1 fast map x -> x + (b1 - A11 x - y):
        // multiplier I - A11 has spectral radius mu < 1.
        let inst = p.as_linear().unwrap();
        let identity = DMatrix::<f64>::identity(20, 20);
        let m = &identity - &inst.a11;
        assert!((spectral_norm(&m) - c.mu).abs() < 1e-9);
    }
}
