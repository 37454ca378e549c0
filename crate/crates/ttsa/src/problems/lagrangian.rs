//! Lagrangian ascent for block-ball constrained maximization of a strongly
//! concave objective `H0(x) = -|x - ell|^2 - sum_i exp(x_i)` under a linear
//! constraint `A x = b0`: the fast variable ascends `grad H0(x) - A^T
//! lambda` under projection onto the block balls, the multiplier ascends the
//! constraint residual `A x - b0` with no injected noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{rng_from_seed, NoiseKind, NoiseModel};
use crate::operators::{DriftPair, OperatorConstants, ProjectionRegion};
use crate::oracle::{projected_picard, FixedPointResult};
use crate::problems::{BuildError, Instance, Problem, ProblemKind};

/// Scale of the random target vector `ell`. Large enough that the block
/// constraints genuinely bind at the constrained optimum, small enough that
/// the exponential term stays tame for the unprojected comparison variant.
const ELL_SCALE: f64 = 1.3;

const REDRAW_LIMIT: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagrangianInstance {
    pub ell: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b0: DVector<f64>,
    pub region: ProjectionRegion,
    /// Strictly feasible point with `A slater = b0` (block norms at most
    /// half the radius).
    pub slater: DVector<f64>,
    pub n_blocks: usize,
    pub radius: f64,
    pub x0: DVector<f64>,
    pub lambda0: DVector<f64>,
    pub constants: OperatorConstants,
}

impl LagrangianInstance {
    pub fn dims(&self) -> (usize, usize) {
        (self.a.ncols(), self.a.nrows())
    }

    pub fn h0(&self, x: &DVector<f64>) -> f64 {
        let mut v = -(x - &self.ell).norm_squared();
        for &xi in x.iter() {
            v -= xi.exp();
        }
        v
    }

    pub fn grad_h0(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| -2.0 * (x[i] - self.ell[i]) - x[i].exp())
    }

    /// Relaxation used by the fixed-point oracles: `x + gamma (grad H0(x) -
    /// A^T lambda)` with `gamma = 2/(rho + L)` is a contraction with factor
    /// `(L - rho)/(L + rho)` on the feasible region, and its (projected)
    /// fixed point is invariant to `gamma`.
    pub fn picard_relaxation(&self) -> f64 {
        2.0 / (self.constants.rho + self.constants.lipschitz)
    }

    fn relaxed_map(&self, gamma: f64) -> impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + '_ {
        move |x: &DVector<f64>, lambda: &DVector<f64>| {
            let mut out = self.grad_h0(x);
            out.gemv_tr(-1.0, &self.a, lambda, 1.0);
            out *= gamma;
            out += x;
            out
        }
    }

    /// Projected fixed point `x^(lambda) = P(x^ + grad H0(x^) - A^T lambda)`,
    /// solved by projected Picard iteration on the relaxed map.
    pub fn x_hat(&self, lambda: &DVector<f64>, warm: Option<&DVector<f64>>) -> FixedPointResult {
        let start = warm.cloned().unwrap_or_else(|| self.slater.clone());
        projected_picard(
            self.relaxed_map(self.picard_relaxation()),
            &self.region,
            lambda,
            &start,
            1e-12,
            100_000,
        )
        .expect("region dims fixed at build")
    }

    /// Unconstrained stationary point `grad H0(x) = A^T lambda`. The
    /// equation is separable per coordinate and strictly monotone, so each
    /// coordinate is solved by bisection; this is the comparison oracle for
    /// the no-projection variant.
    pub fn x_star_unconstrained(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let target = self.a.transpose() * lambda;
        DVector::from_fn(self.ell.len(), |i, _| {
            let t = target[i];
            let phi = |x: f64| -2.0 * (x - self.ell[i]) - x.exp() - t;
            let (mut lo, mut hi) = (-1.0, 1.0);
            while phi(lo) < 0.0 {
                lo = lo * 2.0 - 1.0;
            }
            while phi(hi) > 0.0 {
                hi = hi * 2.0 + 1.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if phi(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
    }

    /// Least-squares multiplier matching the Slater witness:
    /// `lambda = (A A^T)^{-1} A grad H0(slater)`. When `grad H0(slater)` lies
    /// in the row space of `A` (arranged in tests), the witness is the exact
    /// unconstrained stationary point for this multiplier.
    pub fn witness_multiplier(&self) -> DVector<f64> {
        let g = self.grad_h0(&self.slater);
        let aat = &self.a * self.a.transpose();
        aat.cholesky().expect("A has full row rank").solve(&(&self.a * g))
    }

    pub fn feasibility_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b0
    }
}

/// Builds the Lagrangian instance: `A` Gaussian `d2 x d1` rescaled to unit
/// spectral norm and re-drawn until its smallest singular value reaches 0.1,
/// a Slater witness with per-block norms at most half the radius, `b0 = A
/// slater`, and `ell = 1.3 * standard normal`. Declared constants on the
/// feasible region: `rho = 2`, `L = 2 + exp(radius)`.
pub fn build_lagrangian(
    seed: u64,
    d1: usize,
    d2: usize,
    n_blocks: usize,
    radius: f64,
) -> Result<Problem, BuildError> {
    if d1 == 0 || d2 == 0 || n_blocks == 0 {
        return Err(BuildError::EmptyDimension);
    }
    if d2 > d1 {
        return Err(BuildError::ConstraintTooWide { d1, d2 });
    }
    if d1 % n_blocks != 0 {
        return Err(BuildError::BlocksDontDivide { d1, blocks: n_blocks });
    }
    if !(radius > 0.0) {
        return Err(BuildError::BadRadius(radius));
    }
    let block = d1 / n_blocks;
    let mut rng = rng_from_seed(seed);

    let mut a = DMatrix::zeros(d2, d1);
    let mut accepted = false;
    for _ in 0..REDRAW_LIMIT {
        for r in 0..d2 {
            for c in 0..d1 {
                a[(r, c)] = rng.sample(StandardNormal);
            }
        }
        let sv = a.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin / smax >= 0.1 {
            a /= smax;
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(BuildError::SingularRedrawLimit(REDRAW_LIMIT));
    }

    // Slater witness: each block scaled to a strictly interior norm.
    let mut slater = DVector::from_fn(d1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shrink: Vec<f64> = (0..n_blocks).map(|_| rng.random_range(0.3..1.0)).collect();
    for b in 0..n_blocks {
        let s = b * block;
        let norm: f64 = (s..s + block).map(|i| slater[i] * slater[i]).sum::<f64>().sqrt();
        let target = 0.5 * radius * shrink[b];
        for i in s..s + block {
            slater[i] *= target / norm;
        }
    }
    let b0 = &a * &slater;
    let ell = DVector::from_fn(d1, |_, _| ELL_SCALE * rng.sample::<f64, _>(StandardNormal));
    let x0 = DVector::from_fn(d1, |_, _| rng.sample(StandardNormal));
    let lambda0 = DVector::from_fn(d2, |_, _| rng.sample(StandardNormal));

    let sv = a.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-8 {
        return Err(BuildError::ConstructionIdentity("A A^T numerically singular".into()));
    }
    let a_norm = sv.max();
    let rho = 2.0;
    let lipschitz = 2.0 + radius.exp();
    let constants = OperatorConstants {
        mu: (1.0 - (rho / lipschitz).powi(2)).sqrt(),
        lipschitz,
        rho,
        cocoercivity: Some(rho / (a_norm * a_norm)),
    };

    Ok(assemble(LagrangianInstance {
        ell,
        a,
        b0,
        region: ProjectionRegion::BlockBalls { block, radius },
        slater,
        n_blocks,
        radius,
        x0,
        lambda0,
        constants,
    }))
}

pub(crate) fn assemble(inst: LagrangianInstance) -> Problem {
    let (d1, d2) = inst.dims();
    let (a_fast, ell) = (inst.a.clone(), inst.ell.clone());
    let (a_slow, b0) = (inst.a.clone(), inst.b0.clone());
    let drift = DriftPair::new(
        (d1, d2),
        inst.constants,
        Some(inst.region.clone()),
        // grad H0(x) - A^T lambda
        move |x, lambda, out| {
            for i in 0..x.len() {
                out[i] = -2.0 * (x[i] - ell[i]) - x[i].exp();
            }
            out.gemv_tr(-1.0, &a_fast, lambda, 1.0);
        },
        // A x - b0; the multiplier update carries no injected noise.
        move |x, _, out| {
            out.copy_from(&b0);
            out.gemv(1.0, &a_slow, x, -1.0);
        },
    );
    let init = (inst.x0.clone(), inst.lambda0.clone());
    Problem {
        kind: ProblemKind::Lagrangian,
        drift,
        init,
        default_noise: NoiseModel { fast: NoiseKind::GaussianIid { sigma: 1.0 }, slow: NoiseKind::None },
        instance: Instance::Lagrangian(inst),
    }
}
