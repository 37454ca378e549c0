//! Drift fields, projection regions, operator transforms, and Monte Carlo
//! property probes.
//!
//! A [`DriftPair`] packages the two drift fields `f(x,y) - x` and
//! `g(x,y) - y` of a coupled iteration together with its declared operator
//! constants and an optional projection region for the fast variable.
//! Constants are declared by problem constructors, not estimated; the probe
//! functions exist to audit those declarations empirically.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sampling radius for property probes. The audited properties are
/// global in the underlying analysis; sampling on a bounded ball is the
/// desk-scale truncation.
pub const DEFAULT_PROBE_RADIUS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: region expects length {expected}, point has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("block size {block} does not divide vector length {len}")]
    BlockMismatch { block: usize, len: usize },
    #[error("modulus must be positive, got {0}")]
    NonPositiveModulus(f64),
    #[error("strong-monotonicity modulus {modulus} exceeds Lipschitz constant {lipschitz}")]
    ModulusExceedsLipschitz { modulus: f64, lipschitz: f64 },
}

/// Declared operator constants for a drift pair: contraction factor `mu` of
/// the fast map in `x`, joint Lipschitz constant, strong
/// concavity/monotonicity modulus `rho`, and the co-coercivity modulus of the
/// slow operator when one is declared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorConstants {
    pub mu: f64,
    pub lipschitz: f64,
    pub rho: f64,
    pub cocoercivity: Option<f64>,
}

impl OperatorConstants {
    /// Lipschitz constant `L0 = L / (1 - mu)` of the fixed-point map
    /// `y -> x*(y)`.
    pub fn fixed_point_lipschitz(&self) -> f64 {
        self.lipschitz / (1.0 - self.mu)
    }
}

/// Closed convex region with a closed-form Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProjectionRegion {
    AllSpace,
    Ball { center: DVector<f64>, radius: f64 },
    Box { lo: DVector<f64>, hi: DVector<f64> },
    /// Consecutive blocks of `block` coordinates, each constrained to a
    /// centered ball of the given radius.
    BlockBalls { block: usize, radius: f64 },
}

impl ProjectionRegion {
    pub fn ball(center: DVector<f64>, radius: f64) -> Self {
        ProjectionRegion::Ball { center, radius }
    }

    fn check_dims(&self, len: usize) -> Result<(), OperatorError> {
        match self {
            ProjectionRegion::AllSpace => Ok(()),
            ProjectionRegion::Ball { center, .. } => {
                if center.len() == len {
                    Ok(())
                } else {
                    Err(OperatorError::DimensionMismatch { expected: center.len(), actual: len })
                }
            }
            ProjectionRegion::Box { lo, hi } => {
                if lo.len() == len && hi.len() == len {
                    Ok(())
                } else {
                    Err(OperatorError::DimensionMismatch { expected: lo.len(), actual: len })
                }
            }
            ProjectionRegion::BlockBalls { block, .. } => {
                if *block > 0 && len % block == 0 {
                    Ok(())
                } else {
                    Err(OperatorError::BlockMismatch { block: *block, len })
                }
            }
        }
    }

    /// Projects `p` in place onto the region.
    pub fn project_in_place(&self, p: &mut DVector<f64>) -> Result<(), OperatorError> {
        self.check_dims(p.len())?;
        match self {
            ProjectionRegion::AllSpace => {}
            ProjectionRegion::Ball { center, radius } => {
                let mut dist2 = 0.0;
                for i in 0..p.len() {
                    let d = p[i] - center[i];
                    dist2 += d * d;
                }
                let dist = dist2.sqrt();
                if dist > *radius {
                    let scale = radius / dist;
                    for i in 0..p.len() {
                        p[i] = center[i] + (p[i] - center[i]) * scale;
                    }
                }
            }
            ProjectionRegion::Box { lo, hi } => {
                for i in 0..p.len() {
                    p[i] = p[i].clamp(lo[i], hi[i]);
                }
            }
            ProjectionRegion::BlockBalls { block, radius } => {
                for b in 0..p.len() / block {
                    let s = b * block;
                    let norm2: f64 = (s..s + block).map(|i| p[i] * p[i]).sum();
                    let norm = norm2.sqrt();
                    if norm > *radius {
                        let scale = radius / norm;
                        for i in s..s + block {
                            p[i] *= scale;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn project(&self, p: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        let mut out = p.clone();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    /// Membership up to tolerance `tol` on the defining inequalities.
    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        if self.check_dims(p.len()).is_err() {
            return false;
        }
        match self {
            ProjectionRegion::AllSpace => true,
            ProjectionRegion::Ball { center, radius } => (p - center).norm() <= radius + tol,
            ProjectionRegion::Box { lo, hi } => {
                (0..p.len()).all(|i| p[i] >= lo[i] - tol && p[i] <= hi[i] + tol)
            }
            ProjectionRegion::BlockBalls { block, radius } => (0..p.len() / block).all(|b| {
                let s = b * block;
                let norm2: f64 = (s..s + block).map(|i| p[i] * p[i]).sum();
                norm2.sqrt() <= radius + tol
            }),
        }
    }
}

type DriftFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>, &mut DVector<f64>) + Send + Sync>;

/// The pair of drift fields of a coupled iteration. `fast` computes
/// `f(x,y) - x` into its output argument, `slow` computes `g(x,y) - y`.
/// Drift evaluations are pure; a `DriftPair` is safely shareable across
/// concurrently executing runs.
pub struct DriftPair {
    pub dims: (usize, usize),
    pub constants: OperatorConstants,
    pub region: Option<ProjectionRegion>,
    fast: DriftFn,
    slow: DriftFn,
}

impl DriftPair {
    pub fn new(
        dims: (usize, usize),
        constants: OperatorConstants,
        region: Option<ProjectionRegion>,
        fast: impl Fn(&DVector<f64>, &DVector<f64>, &mut DVector<f64>) + Send + Sync + 'static,
        slow: impl Fn(&DVector<f64>, &DVector<f64>, &mut DVector<f64>) + Send + Sync + 'static,
    ) -> Self {
        Self { dims, constants, region, fast: Box::new(fast), slow: Box::new(slow) }
    }

    pub fn fast_drift_into(&self, x: &DVector<f64>, y: &DVector<f64>, out: &mut DVector<f64>) {
        (self.fast)(x, y, out);
    }

    pub fn slow_drift_into(&self, x: &DVector<f64>, y: &DVector<f64>, out: &mut DVector<f64>) {
        (self.slow)(x, y, out);
    }

    pub fn fast_drift(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dims.0);
        self.fast_drift_into(x, y, &mut out);
        out
    }

    pub fn slow_drift(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dims.1);
        self.slow_drift_into(x, y, &mut out);
        out
    }

    /// The fast map itself, `f(x,y) = x + (f(x,y) - x)`.
    pub fn fast_map(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = self.fast_drift(x, y);
        out += x;
        out
    }

    /// The slow map itself, `g(x,y) = y + (g(x,y) - y)`.
    pub fn slow_map(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = self.slow_drift(x, y);
        out += y;
        out
    }
}

/// For `h` strongly monotone with modulus `c` and `ell`-Lipschitz, the map
/// `q(x) = x - (c/ell^2) h(x)` is a contraction with factor
/// `sqrt(1 - c^2/ell^2)`. Rejects `c > ell` (the factor would be imaginary)
/// and `c <= 0` (a zero modulus, e.g. a constant map, yields no contraction).
pub fn contractive_from_strongly_monotone<F>(
    h: F,
    modulus: f64,
    lipschitz: f64,
) -> Result<impl Fn(&DVector<f64>) -> DVector<f64>, OperatorError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if modulus <= 0.0 {
        return Err(OperatorError::NonPositiveModulus(modulus));
    }
    if modulus > lipschitz {
        return Err(OperatorError::ModulusExceedsLipschitz { modulus, lipschitz });
    }
    let scale = modulus / (lipschitz * lipschitz);
    Ok(move |x: &DVector<f64>| {
        let mut out = h(x);
        out *= -scale;
        out += x;
        out
    })
}

/// For `h` co-coercive with modulus `c`, the map `q(x) = x - 2c h(x)` is
/// non-expansive.
pub fn nonexpansive_from_cocoercive<F>(
    h: F,
    modulus: f64,
) -> Result<impl Fn(&DVector<f64>) -> DVector<f64>, OperatorError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if modulus <= 0.0 {
        return Err(OperatorError::NonPositiveModulus(modulus));
    }
    Ok(move |x: &DVector<f64>| {
        let mut out = h(x);
        out *= -2.0 * modulus;
        out += x;
        out
    })
}

/// Uniform sampler on a centered ball, for probe inputs.
pub fn ball_sampler(dim: usize, radius: f64, seed: u64) -> impl FnMut() -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move || {
        let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let norm = v.norm();
        if norm > 0.0 {
            let u: f64 = rand::Rng::random(&mut rng);
            v *= radius * u.powf(1.0 / dim as f64) / norm;
        }
        v
    }
}

fn sample_distinct_pair(
    sampler: &mut impl FnMut() -> DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    for _ in 0..1000 {
        let u1 = sampler();
        let u2 = sampler();
        if (&u1 - &u2).norm() > 0.0 {
            return Some((u1, u2));
        }
    }
    None
}

/// Empirical Lipschitz estimate: the maximum of
/// `|map(u1) - map(u2)| / |u1 - u2|` over `n_pairs` sampled pairs.
/// Degenerate pairs (`u1 = u2`) are resampled.
pub fn probe_lipschitz<M>(
    map: M,
    mut sampler: impl FnMut() -> DVector<f64>,
    n_pairs: usize,
) -> f64
where
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    assert!(n_pairs >= 1, "probe needs at least one pair");
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let Some((u1, u2)) = sample_distinct_pair(&mut sampler) else { break };
        let ratio = (map(&u1) - map(&u2)).norm() / (&u1 - &u2).norm();
        worst = worst.max(ratio);
    }
    worst
}

/// Empirical co-coercivity estimate: the minimum of
/// `<map(u1) - map(u2), u1 - u2> / |map(u1) - map(u2)|^2` over sampled pairs.
/// Pairs on which the map difference vanishes carry no information and are
/// skipped; if every pair degenerates the probe is undefined and `None` is
/// returned. A value of at least 1/2 is consistent with non-expansiveness of
/// the identity-minus-map.
pub fn probe_cocoercivity<M>(
    map: M,
    mut sampler: impl FnMut() -> DVector<f64>,
    n_pairs: usize,
) -> Option<f64>
where
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    assert!(n_pairs >= 1, "probe needs at least one pair");
    let mut best: Option<f64> = None;
    for _ in 0..n_pairs {
        let Some((u1, u2)) = sample_distinct_pair(&mut sampler) else { break };
        let diff = map(&u1) - map(&u2);
        let denom = diff.norm_squared();
        if denom == 0.0 {
            continue;
        }
        let value = diff.dot(&(&u1 - &u2)) / denom;
        best = Some(best.map_or(value, |b: f64| b.min(value)));
    }
    best
}
