//! Gradient descent-ascent on `H(x, y) = x^T A y - 0.5 |x|^2 + (y^T Q y)^2`
//! with random `A` and random symmetric PSD `Q`: ascent in `x` (strongly
//! concave, modulus 1), descent in `y` (convex envelope `Phi`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{rng_from_seed, NoiseModel};
use crate::operators::{
    DriftPair, OperatorConstants, ProjectionRegion, DEFAULT_PROBE_RADIUS,
};
use crate::problems::{BuildError, Instance, Problem, ProblemKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimaxInstance {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub region: ProjectionRegion,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub constants: OperatorConstants,
}

impl MinimaxInstance {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Unconstrained maximizer of `H(., y)`: the ascent drift `A y - x`
    /// vanishes at `x = A y`.
    pub fn x_star_unconstrained(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.a * y
    }

    /// Constrained maximizer: the objective is spherically concave around
    /// `A y`, so the maximizer over the region is its projection.
    pub fn x_star(&self, y: &DVector<f64>) -> DVector<f64> {
        self.region.project(&(&self.a * y)).expect("region dims fixed at build")
    }

    /// Envelope gradient via the stationarity of the inner maximizer:
    /// `grad Phi(y) = A^T x*(y) + 4 (y^T Q y) Q y`.
    pub fn grad_phi(&self, y: &DVector<f64>) -> DVector<f64> {
        let qy = &self.q * y;
        let quad = y.dot(&qy);
        self.a.transpose() * self.x_star(y) + 4.0 * quad * qy
    }

    /// The saddle objective `H(x, y)`.
    pub fn objective(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let qy = &self.q * y;
        let quad = y.dot(&qy);
        x.dot(&(&self.a * y)) - 0.5 * x.norm_squared() + quad * quad
    }

    /// The envelope `Phi(y) = max_x H(x, y)`, evaluated at the constrained
    /// maximizer.
    pub fn phi(&self, y: &DVector<f64>) -> f64 {
        self.objective(&self.x_star(y), y)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Builds the minimax instance: `A` standard normal, `Q = V V^T / d` for
/// standard normal `V`, fast region a centered ball. The declared Lipschitz
/// constant covers the envelope gradient on the default probe ball, where
/// `grad Phi` has Lipschitz constant at most `|A|^2 + 12 |Q|^2 r^2`.
pub fn build_minimax(seed: u64, d: usize, x_region_radius: f64) -> Result<Problem, BuildError> {
    if d == 0 {
        return Err(BuildError::EmptyDimension);
    }
    if !(x_region_radius > 0.0) {
        return Err(BuildError::BadRadius(x_region_radius));
    }
    let mut rng = rng_from_seed(seed);
    let mut a = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            a[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let mut v: DMatrix<f64> = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            v[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let mut q: DMatrix<f64> = &v * v.transpose();
    q /= d as f64;
    let qt = q.transpose();
    q += qt;
    q *= 0.5;
    let x0 = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    let y0 = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));

    let a_norm = spectral_norm(&a);
    let q_norm = q.clone().symmetric_eigen().eigenvalues.max();
    let r = DEFAULT_PROBE_RADIUS;
    let phi_lipschitz = a_norm * a_norm + 12.0 * q_norm * q_norm * r * r;
    // The ascent map f(x,y) = A y is constant in x, so any factor in (0,1)
    // upper-bounds its contraction; 1/2 leaves slack in the audited
    // relaxation step 1/(L L0).
    let mu = 0.5;
    let lipschitz = a_norm.max((0.5 * phi_lipschitz).sqrt()).max(1.0);
    let l0 = lipschitz / (1.0 - mu);
    let constants = OperatorConstants {
        mu,
        lipschitz,
        rho: 1.0,
        cocoercivity: Some(1.0 / (2.0 * lipschitz * l0)),
    };

    Ok(assemble(MinimaxInstance {
        a,
        q,
        region: ProjectionRegion::ball(DVector::zeros(d), x_region_radius),
        x0,
        y0,
        constants,
    }))
}

pub(crate) fn assemble(inst: MinimaxInstance) -> Problem {
    let d = inst.dim();
    let a_fast = inst.a.clone();
    let (a_slow, q_slow) = (inst.a.clone(), inst.q.clone());
    let drift = DriftPair::new(
        (d, d),
        inst.constants,
        Some(inst.region.clone()),
        // grad_x H = A y - x
        move |x, y, out| {
            out.gemv(1.0, &a_fast, y, 0.0);
            *out -= x;
        },
        // -grad_y H = -(A^T x + 4 (y^T Q y) Q y)
        move |x, y, out| {
            let qy = &q_slow * y;
            let quad = y.dot(&qy);
            out.gemv_tr(-1.0, &a_slow, x, 0.0);
            out.axpy(-4.0 * quad, &qy, 1.0);
        },
    );
    let init = (inst.x0.clone(), inst.y0.clone());
    Problem {
        kind: ProblemKind::Minimax,
        drift,
        init,
        default_noise: NoiseModel::gaussian(1.0),
        instance: Instance::Minimax(inst),
    }
}
