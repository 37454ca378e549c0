//! Non-convex slow time-scale: the fast map `f(x, y) = mu x + (1 - mu) y`
//! tracks `x*(y) = y`, while the slow drift applies gradient descent on the
//! smooth bounded-below objective `J(y) = sum_i (1 - cos y_i)` evaluated at
//! the fast iterate, so that `g(x*(y), y) - y = -grad J(y)`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{rng_from_seed, NoiseModel};
use crate::operators::{DriftPair, OperatorConstants};
use crate::problems::{BuildError, Instance, Problem, ProblemKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientVariantInstance {
    pub mu: f64,
    pub dim: usize,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub constants: OperatorConstants,
}

impl GradientVariantInstance {
    /// Lower bound of the objective, attained at the minima `y = 0 mod 2 pi`.
    pub const J_MIN: f64 = 0.0;

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        y.iter().map(|v| 1.0 - v.cos()).sum()
    }

    /// `grad J(y) = sin(y)` componentwise; 1-Lipschitz.
    pub fn grad_objective(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v.sin())
    }
}

pub fn build_gradient_variant(seed: u64, d: usize, mu: f64) -> Result<Problem, BuildError> {
    if d == 0 {
        return Err(BuildError::EmptyDimension);
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(BuildError::BadContraction(mu));
    }
    let mut rng = rng_from_seed(seed);
    let x0 = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    let y0 = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    // Joint Lipschitz budget of the pair (f, g): f contributes mu on x and
    // 1 - mu on y, g contributes 1 on each.
    let constants = OperatorConstants {
        mu,
        lipschitz: (1.0 + mu).max(2.0 - mu),
        rho: 1.0 - mu,
        cocoercivity: None,
    };
    Ok(assemble(GradientVariantInstance { mu, dim: d, x0, y0, constants }))
}

pub(crate) fn assemble(inst: GradientVariantInstance) -> Problem {
    let d = inst.dim;
    let mu = inst.mu;
    let drift = DriftPair::new(
        (d, d),
        inst.constants,
        None,
        // f(x,y) - x = (1 - mu)(y - x)
        move |x, y, out| {
            for i in 0..x.len() {
                out[i] = (1.0 - mu) * (y[i] - x[i]);
            }
        },
        // g(x,y) - y = -grad J(x), the descent drift at the fast iterate
        move |x, _, out| {
            for i in 0..x.len() {
                out[i] = -x[i].sin();
            }
        },
    );
    let init = (inst.x0.clone(), inst.y0.clone());
    Problem {
        kind: ProblemKind::GradientVariant,
        drift,
        init,
        default_noise: NoiseModel::gaussian(1.0),
        instance: Instance::GradientVariant(inst),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff_grad;

    #[test]
    fn objective_landmarks() {
        let p = build_gradient_variant(7, 4, 0.5).unwrap();
        let inst = p.as_gradient_variant().unwrap();
        let zero = DVector::zeros(4);
        assert_eq!(inst.objective(&zero), 0.0);
        assert!(inst.grad_objective(&zero).norm() == 0.0);

        // Stationary but non-minimal point.
        let mut y = DVector::zeros(4);
        y[0] = std::f64::consts::PI;
        assert!((inst.objective(&y) - 2.0).abs() < 1e-15);
        assert!(inst.grad_objective(&y).norm() < 1e-15);
    }

    #[test]
    fn objective_bounded_below() {
        let p = build_gradient_variant(11, 6, 0.5).unwrap();
        let inst = p.as_gradient_variant().unwrap();
        let mut rng = rng_from_seed(13);
        for _ in 0..10_000 {
            let y = DVector::from_fn(6, |_, _| 10.0 * rng.sample::<f64, _>(StandardNormal));
            assert!(inst.objective(&y) >= GradientVariantInstance::J_MIN);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let p = build_gradient_variant(13, 5, 0.5).unwrap();
        let inst = p.as_gradient_variant().unwrap();
        let mut rng = rng_from_seed(17);
        for _ in 0..100 {
            let y = DVector::from_fn(5, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            let fd = finite_diff_grad(|u| inst.objective(u), &y, 1e-5);
            let g = inst.grad_objective(&y);
            assert!((fd - &g).norm() <= 1e-6 * (1.0 + g.norm()));
        }
    }

    #[test]
    fn slow_drift_at_oracle_is_negative_gradient() {
        let p = build_gradient_variant(17, 5, 0.3).unwrap();
        let inst = p.as_gradient_variant().unwrap();
        let mut rng = rng_from_seed(19);
        for _ in 0..50 {
            let y = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            // x*(y) = y, so the slow drift there is exactly -grad J(y).
            let drift = p.drift.slow_drift(&y, &y);
            assert!((drift + inst.grad_objective(&y)).norm() < 1e-15);
        }
    }

    #[test]
    fn fast_map_contracts_with_declared_factor() {
        let p = build_gradient_variant(19, 3, 0.7).unwrap();
        let y = DVector::from_element(3, 0.4);
        let x1 = DVector::from_element(3, 1.0);
        let x2 = DVector::from_element(3, -2.0);
        let f1 = p.drift.fast_map(&x1, &y);
        let f2 = p.drift.fast_map(&x2, &y);
        let ratio = (f1 - f2).norm() / (&x1 - &x2).norm();
        assert!((ratio - 0.7).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_map_lipschitz_audit() {
        // x*(y) = y is 1-Lipschitz; the declared budget L/(1-mu) covers it.
        let p = build_gradient_variant(23, 5, 0.5).unwrap();
        let bound = p.drift.constants.fixed_point_lipschitz();
        assert!(bound >= 1.0);
        let mut rng = rng_from_seed(29);
        for _ in 0..1000 {
            let y1 = DVector::from_fn(5, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            let y2 = DVector::from_fn(5, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            let lhs = (p.x_ref(&y1, crate::engine::Variant::Plain, None).point
                - p.x_ref(&y2, crate::engine::Variant::Plain, None).point)
                .norm();
            assert!(lhs <= bound * (y1 - y2).norm() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn rejects_bad_contraction() {
        assert!(build_gradient_variant(1, 5, 0.0).is_err());
        assert!(build_gradient_variant(1, 5, 1.0).is_err());
    }
}
