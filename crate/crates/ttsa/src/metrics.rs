//! Residual evaluation against problem oracles, cross-run aggregation,
//! empirical rate fitting, and calibrated bound overlays.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Trajectory, Variant};
use crate::problems::{Instance, Problem, ProblemKind};
use crate::schedules::StepSchedule;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("residual kind {kind} is not defined for problem {problem}")]
    UnsupportedKind { kind: &'static str, problem: &'static str },
    #[error("aggregation needs at least one completed run")]
    NoRuns,
    #[error("aggregation requires identical sample grids across runs")]
    GridMismatch,
    #[error("rate fit window [{k_lo}, {k_hi}] holds {found} points, needs at least {needed}")]
    WindowTooSmall { k_lo: u64, k_hi: u64, found: usize, needed: usize },
    #[error("rate fit requires strictly positive means in the window")]
    NonPositiveMean,
    #[error("overlay coefficient must be positive")]
    BadCoefficient,
    #[error("calibration index {0} is not on the aggregate grid")]
    CalibrationOffGrid(u64),
    #[error("no bound exponent is defined for residual kind {0}")]
    NoOverlayExponent(&'static str),
}

/// Residual quantities evaluated along a trajectory. `Fast` and `Slow` are
/// the two tracked mean-square residuals (against the fixed-point oracle);
/// the remaining kinds are application-specific.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResidualKind {
    /// `|x_k - x*(y_k)|^2` (projected runs use the projected fixed point).
    Fast,
    /// `|g(x*(y_k), y_k) - y_k|^2`, the slow drift magnitude at the oracle.
    Slow,
    /// `|grad Phi(y_k)|^2` for the minimax envelope.
    GradPhi,
    /// `|A21 x_k + A22 y_k - b2|^2` at the trajectory point.
    LinearSlow,
    /// `|A x_k - b0|^2` for the Lagrangian constraint.
    Feasibility,
    /// `|grad J(y_k)|^2` for the gradient variant.
    GradJ,
    /// `|U_k|^2`, the averaged-noise magnitude.
    Shadow,
}

impl ResidualKind {
    pub fn name(&self) -> &'static str {
        match self {
            ResidualKind::Fast => "fast",
            ResidualKind::Slow => "slow",
            ResidualKind::GradPhi => "grad_phi",
            ResidualKind::LinearSlow => "linear_slow",
            ResidualKind::Feasibility => "feasibility",
            ResidualKind::GradJ => "grad_j",
            ResidualKind::Shadow => "shadow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fast" => Some(ResidualKind::Fast),
            "slow" => Some(ResidualKind::Slow),
            "grad_phi" => Some(ResidualKind::GradPhi),
            "linear_slow" => Some(ResidualKind::LinearSlow),
            "feasibility" => Some(ResidualKind::Feasibility),
            "grad_j" => Some(ResidualKind::GradJ),
            "shadow" => Some(ResidualKind::Shadow),
            _ => None,
        }
    }

    fn needs_oracle(&self) -> bool {
        matches!(self, ResidualKind::Fast | ResidualKind::Slow)
    }

    fn supported_by(&self, kind: ProblemKind) -> bool {
        match self {
            ResidualKind::Fast | ResidualKind::Slow | ResidualKind::Shadow => true,
            ResidualKind::GradPhi => kind == ProblemKind::Minimax,
            ResidualKind::LinearSlow => kind == ProblemKind::Linear,
            ResidualKind::Feasibility => kind == ProblemKind::Lagrangian,
            ResidualKind::GradJ => kind == ProblemKind::GradientVariant,
        }
    }
}

/// The residual kinds an experiment records by default for each problem.
pub fn default_kinds(problem: ProblemKind) -> Vec<ResidualKind> {
    match problem {
        ProblemKind::Linear => vec![
            ResidualKind::Fast,
            ResidualKind::Slow,
            ResidualKind::LinearSlow,
            ResidualKind::Shadow,
        ],
        ProblemKind::Minimax => vec![
            ResidualKind::Fast,
            ResidualKind::Slow,
            ResidualKind::GradPhi,
            ResidualKind::Shadow,
        ],
        ProblemKind::Lagrangian => vec![
            ResidualKind::Fast,
            ResidualKind::Slow,
            ResidualKind::Feasibility,
            ResidualKind::Shadow,
        ],
        ProblemKind::GradientVariant => {
            vec![ResidualKind::Fast, ResidualKind::GradJ, ResidualKind::Shadow]
        }
    }
}

/// One residual series along a single run; a point is absent when its oracle
/// solve did not converge.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    pub kind: ResidualKind,
    pub points: Vec<(u64, f64)>,
}

/// Evaluates the requested residual kinds at every recorded sample of a
/// trajectory. Fixed-point solves are warm-started from the previous
/// sample's solution, since the tracked target moves slowly along a run.
pub fn residuals(
    traj: &Trajectory,
    problem: &Problem,
    kinds: &[ResidualKind],
    variant: Variant,
) -> Result<Vec<ResidualSeries>, MetricsError> {
    for kind in kinds {
        if !kind.supported_by(problem.kind) {
            return Err(MetricsError::UnsupportedKind {
                kind: kind.name(),
                problem: problem.kind.name(),
            });
        }
    }
    let needs_oracle = kinds.iter().any(|k| k.needs_oracle());
    let mut series: Vec<ResidualSeries> =
        kinds.iter().map(|&kind| ResidualSeries { kind, points: Vec::with_capacity(traj.samples.len()) }).collect();
    let mut warm: Option<DVector<f64>> = None;

    for sample in &traj.samples {
        let x_ref = if needs_oracle {
            let outcome = problem.x_ref(&sample.y, variant, warm.as_ref());
            if outcome.converged {
                warm = Some(outcome.point.clone());
                Some(outcome.point)
            } else {
                None
            }
        } else {
            None
        };

        for s in series.iter_mut() {
            let value = match s.kind {
                ResidualKind::Fast => {
                    x_ref.as_ref().map(|xr| (&sample.x - xr).norm_squared())
                }
                ResidualKind::Slow => x_ref
                    .as_ref()
                    .map(|xr| problem.drift.slow_drift(xr, &sample.y).norm_squared()),
                ResidualKind::GradPhi => match &problem.instance {
                    Instance::Minimax(inst) => Some(inst.grad_phi(&sample.y).norm_squared()),
                    _ => unreachable!("checked above"),
                },
                ResidualKind::LinearSlow => match &problem.instance {
                    Instance::Linear(inst) => {
                        Some(inst.slow_residual(&sample.x, &sample.y).norm_squared())
                    }
                    _ => unreachable!("checked above"),
                },
                ResidualKind::Feasibility => match &problem.instance {
                    Instance::Lagrangian(inst) => {
                        Some(inst.feasibility_residual(&sample.x).norm_squared())
                    }
                    _ => unreachable!("checked above"),
                },
                ResidualKind::GradJ => match &problem.instance {
                    Instance::GradientVariant(inst) => {
                        Some(inst.grad_objective(&sample.y).norm_squared())
                    }
                    _ => unreachable!("checked above"),
                },
                ResidualKind::Shadow => Some(sample.avg_noise.norm_squared()),
            };
            if let Some(v) = value {
                s.points.push((sample.k, v));
            }
        }
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub k: u64,
    pub mean: f64,
    pub std: f64,
}

/// Pointwise mean and population standard deviation over the non-diverged
/// runs, with the diverged count carried alongside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateSeries {
    pub kind: ResidualKind,
    pub points: Vec<AggregatePoint>,
    pub n_runs: usize,
    pub n_diverged: usize,
}

impl AggregateSeries {
    pub fn mean_at(&self, k: u64) -> Option<f64> {
        self.points.iter().find(|p| p.k == k).map(|p| p.mean)
    }

    pub fn final_mean(&self) -> Option<f64> {
        self.points.last().map(|p| p.mean)
    }
}

/// Aggregates one residual kind across runs. All runs must share the same
/// sample grid; `n_diverged` records how many runs were excluded upstream.
pub fn aggregate(
    series: &[ResidualSeries],
    n_diverged: usize,
) -> Result<AggregateSeries, MetricsError> {
    let first = series.first().ok_or(MetricsError::NoRuns)?;
    let kind = first.kind;
    let grid: Vec<u64> = first.points.iter().map(|p| p.0).collect();
    for s in series {
        if s.kind != kind || s.points.len() != grid.len() {
            return Err(MetricsError::GridMismatch);
        }
        if s.points.iter().map(|p| p.0).ne(grid.iter().copied()) {
            return Err(MetricsError::GridMismatch);
        }
    }
    let n = series.len();
    let mut points = Vec::with_capacity(grid.len());
    for (i, &k) in grid.iter().enumerate() {
        let mean = series.iter().map(|s| s.points[i].1).sum::<f64>() / n as f64;
        let var =
            series.iter().map(|s| (s.points[i].1 - mean).powi(2)).sum::<f64>() / n as f64;
        points.push(AggregatePoint { k, mean, std: var.sqrt() });
    }
    Ok(AggregateSeries { kind, points, n_runs: n, n_diverged })
}

/// Least-squares fit of `log(mean)` against `log(k+1)` over the window
/// `[k_lo, k_hi]`; returns `(slope, intercept)`.
pub fn fit_rate(
    agg: &AggregateSeries,
    k_lo: u64,
    k_hi: u64,
) -> Result<(f64, f64), MetricsError> {
    const MIN_POINTS: usize = 10;
    let window: Vec<&AggregatePoint> =
        agg.points.iter().filter(|p| p.k >= k_lo && p.k <= k_hi).collect();
    if window.len() < MIN_POINTS {
        return Err(MetricsError::WindowTooSmall {
            k_lo,
            k_hi,
            found: window.len(),
            needed: MIN_POINTS,
        });
    }
    if window.iter().any(|p| p.mean <= 0.0) {
        return Err(MetricsError::NonPositiveMean);
    }
    let n = window.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for p in &window {
        let x = ((p.k + 1) as f64).ln();
        let y = p.mean.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok((slope, intercept))
}

/// A theoretical decay envelope `k -> C / (k+1)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOverlay {
    pub coefficient: f64,
    pub exponent: f64,
}

impl BoundOverlay {
    pub fn eval(&self, k: u64) -> f64 {
        self.coefficient / ((k + 1) as f64).powf(self.exponent)
    }
}

/// The guaranteed decay exponent for a residual kind under a schedule: the
/// fast residual decays like `1/(k+1)^a`, the slow-time-scale residuals like
/// `1/(k+1)^(1-b)`. Kinds without a power-law envelope return `None`.
pub fn overlay_exponent(kind: ResidualKind, sched: &StepSchedule) -> Option<f64> {
    let (fast, slow) = sched.theoretical_exponents();
    match kind {
        ResidualKind::Fast => Some(fast),
        ResidualKind::Slow
        | ResidualKind::GradPhi
        | ResidualKind::LinearSlow
        | ResidualKind::Feasibility => Some(slow),
        ResidualKind::GradJ | ResidualKind::Shadow => None,
    }
}

/// Overlay with an explicitly chosen coefficient.
pub fn bound_overlay(
    sched: &StepSchedule,
    kind: ResidualKind,
    coefficient: f64,
) -> Result<BoundOverlay, MetricsError> {
    if !(coefficient > 0.0) {
        return Err(MetricsError::BadCoefficient);
    }
    let exponent =
        overlay_exponent(kind, sched).ok_or(MetricsError::NoOverlayExponent(kind.name()))?;
    Ok(BoundOverlay { coefficient, exponent })
}

/// Calibrates the overlay coefficient so the curve touches the aggregate
/// mean at `k_cal`: the envelope constants of the finite-time bounds involve
/// unobservable quantities, so a single-point calibration plus the exponent
/// is the strongest desk-scale comparison.
pub fn calibrate_overlay(
    agg: &AggregateSeries,
    sched: &StepSchedule,
    k_cal: u64,
) -> Result<BoundOverlay, MetricsError> {
    let exponent = overlay_exponent(agg.kind, sched)
        .ok_or(MetricsError::NoOverlayExponent(agg.kind.name()))?;
    let mean = agg.mean_at(k_cal).ok_or(MetricsError::CalibrationOffGrid(k_cal))?;
    if !(mean > 0.0) {
        return Err(MetricsError::BadCoefficient);
    }
    Ok(BoundOverlay { coefficient: mean * ((k_cal + 1) as f64).powf(exponent), exponent })
}

/// Running minimum of a series; non-increasing and pointwise at most the
/// input.
pub fn min_so_far(points: &[(u64, f64)]) -> Vec<(u64, f64)> {
    let mut best = f64::INFINITY;
    points
        .iter()
        .map(|&(k, v)| {
            best = best.min(v);
            (k, best)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RunOutcome, Sample};
    use crate::problems::build_linear;

    fn series(kind: ResidualKind, values: &[(u64, f64)]) -> ResidualSeries {
        ResidualSeries { kind, points: values.to_vec() }
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let runs = vec![
            series(ResidualKind::Fast, &[(0, 1.0), (10, 4.0)]),
            series(ResidualKind::Fast, &[(0, 3.0), (10, 4.0)]),
        ];
        let agg = aggregate(&runs, 1).unwrap();
        assert_eq!(agg.n_runs, 2);
        assert_eq!(agg.n_diverged, 1);
        assert_eq!(agg.points[0].mean, 2.0);
        assert_eq!(agg.points[0].std, 1.0);
        assert_eq!(agg.points[1].std, 0.0);
    }

    #[test]
    fn aggregate_identical_runs_zero_std() {
        let one = series(ResidualKind::Slow, &[(0, 0.5), (5, 0.25), (10, 0.125)]);
        let agg = aggregate(&[one.clone(), one.clone(), one], 0).unwrap();
        assert!(agg.points.iter().all(|p| p.std == 0.0));
    }

    #[test]
    fn aggregate_rejects_mismatched_grids() {
        let a = series(ResidualKind::Fast, &[(0, 1.0), (10, 2.0)]);
        let b = series(ResidualKind::Fast, &[(0, 1.0), (20, 2.0)]);
        assert!(matches!(aggregate(&[a, b], 0), Err(MetricsError::GridMismatch)));
        assert!(matches!(aggregate(&[], 0), Err(MetricsError::NoRuns)));
    }

    #[test]
    fn aggregate_permutation_invariant() {
        let a = series(ResidualKind::Fast, &[(0, 1.0), (10, 0.125)]);
        let b = series(ResidualKind::Fast, &[(0, 3.5), (10, 0.7)]);
        let c = series(ResidualKind::Fast, &[(0, 0.01), (10, 2.25)]);
        let fwd = aggregate(&[a.clone(), b.clone(), c.clone()], 0).unwrap();
        let rev = aggregate(&[c, b, a], 0).unwrap();
        for (p, q) in fwd.points.iter().zip(&rev.points) {
            assert!((p.mean - q.mean).abs() < 1e-12);
            assert!((p.std - q.std).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_recovers_exact_power_law() {
        let pts: Vec<AggregatePoint> = (0..=100)
            .map(|i| {
                let k = i * 100;
                AggregatePoint { k, mean: 2.5 / ((k + 1) as f64).powf(0.75), std: 0.0 }
            })
            .collect();
        let agg =
            AggregateSeries { kind: ResidualKind::Slow, points: pts, n_runs: 1, n_diverged: 0 };
        let (slope, intercept) = fit_rate(&agg, 0, 10_000).unwrap();
        assert!((slope + 0.75).abs() < 1e-9);
        assert!((intercept - 2.5f64.ln()).abs() < 1e-9);

        let flat: Vec<AggregatePoint> =
            (0..=20).map(|i| AggregatePoint { k: i * 10, mean: 3.0, std: 0.0 }).collect();
        let agg =
            AggregateSeries { kind: ResidualKind::Slow, points: flat, n_runs: 1, n_diverged: 0 };
        let (slope, _) = fit_rate(&agg, 0, 1000).unwrap();
        assert!(slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_windows() {
        let pts: Vec<AggregatePoint> =
            (0..=20).map(|i| AggregatePoint { k: i, mean: 1.0, std: 0.0 }).collect();
        let agg = AggregateSeries {
            kind: ResidualKind::Slow,
            points: pts.clone(),
            n_runs: 1,
            n_diverged: 0,
        };
        assert!(matches!(
            fit_rate(&agg, 0, 5),
            Err(MetricsError::WindowTooSmall { .. })
        ));
        let mut bad = pts;
        bad[3].mean = 0.0;
        let agg =
            AggregateSeries { kind: ResidualKind::Slow, points: bad, n_runs: 1, n_diverged: 0 };
        assert!(matches!(fit_rate(&agg, 0, 20), Err(MetricsError::NonPositiveMean)));
    }

    #[test]
    fn overlay_exponents_and_calibration() {
        let sched = StepSchedule::new(0.5, 0.1, 0.55, 0.85, 100.0).unwrap();
        assert_eq!(overlay_exponent(ResidualKind::Fast, &sched), Some(0.55));
        let slow = overlay_exponent(ResidualKind::Slow, &sched).unwrap();
        assert!((slow - 0.15).abs() < 1e-12);
        assert_eq!(overlay_exponent(ResidualKind::Shadow, &sched), None);

        let pts: Vec<AggregatePoint> = (0..=20)
            .map(|i| AggregatePoint { k: i * 100, mean: 1.0 / (i + 1) as f64, std: 0.0 })
            .collect();
        let agg =
            AggregateSeries { kind: ResidualKind::Slow, points: pts, n_runs: 1, n_diverged: 0 };
        let overlay = calibrate_overlay(&agg, &sched, 1000).unwrap();
        let mean_at_cal = agg.mean_at(1000).unwrap();
        assert!((overlay.eval(1000) - mean_at_cal).abs() < 1e-12 * mean_at_cal);
        assert!(calibrate_overlay(&agg, &sched, 1001).is_err());
    }

    #[test]
    fn min_so_far_examples() {
        let out = min_so_far(&[(0, 3.0), (1, 1.0), (2, 2.0)]);
        assert_eq!(out, vec![(0, 3.0), (1, 1.0), (2, 1.0)]);

        let monotone = [(0, 5.0), (1, 4.0), (2, 3.0)];
        assert_eq!(min_so_far(&monotone), monotone.to_vec());

        let out = min_so_far(&[(0, 1.0), (1, 7.0), (2, 0.5), (3, 9.0)]);
        let mut prev = f64::INFINITY;
        for (i, &(_, v)) in out.iter().enumerate() {
            assert!(v <= prev);
            assert!(v <= [1.0, 7.0, 0.5, 9.0][i]);
            prev = v;
        }
    }

    #[test]
    fn residuals_at_planted_solution_are_zero() {
        let p = build_linear(7, 8, 3).unwrap();
        let inst = p.as_linear().unwrap();
        // A trajectory frozen at the planted solution.
        let samples: Vec<Sample> = (0..3)
            .map(|i| Sample {
                k: i * 10,
                x: inst.planted_x.clone(),
                y: inst.planted_y.clone(),
                avg_noise: DVector::zeros(8),
            })
            .collect();
        let traj = Trajectory {
            stride: 10,
            samples,
            outcome: RunOutcome::Completed,
            slow_noise_log: None,
        };
        let kinds = [
            ResidualKind::Fast,
            ResidualKind::Slow,
            ResidualKind::LinearSlow,
            ResidualKind::Shadow,
        ];
        let series = residuals(&traj, &p, &kinds, Variant::Plain).unwrap();
        for s in &series {
            for &(_, v) in &s.points {
                assert!(v < 1e-16, "{:?} residual {v}", s.kind);
            }
        }
    }

    #[test]
    fn slow_residual_dual_code_paths_agree() {
        let p = build_linear(11, 10, 4).unwrap();
        let inst = p.as_linear().unwrap();
        let mut rng = crate::engine::rng_from_seed(3);
        for _ in 0..50 {
            let y = DVector::from_fn(10, |_, _| {
                rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
            });
            // Route 1: generic drift-at-oracle (the Slow kind).
            let xr = p.x_ref(&y, Variant::Plain, None).point;
            let via_drift = p.drift.slow_drift(&xr, &y).norm_squared();
            // Route 2: the reduced closed form.
            let via_reduced = inst.slow_residual_at_oracle(&y).norm_squared();
            assert!((via_drift - via_reduced).abs() <= 1e-9 * (1.0 + via_reduced));
        }
    }

    #[test]
    fn unsupported_kind_rejected() {
        let p = build_linear(3, 6, 2).unwrap();
        let traj = Trajectory {
            stride: 1,
            samples: vec![],
            outcome: RunOutcome::Completed,
            slow_noise_log: None,
        };
        assert!(matches!(
            residuals(&traj, &p, &[ResidualKind::Feasibility], Variant::Plain),
            Err(MetricsError::UnsupportedKind { .. })
        ));
    }
}
