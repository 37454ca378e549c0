//! Execution of the coupled stochastic iterations.
//!
//! A step advances
//!
//! ```text
//! x' = x + alpha_k (fast_drift(x, y) + M)          (optionally projected)
//! y' = y + beta_k (slow_drift(x, y) + M')
//! U' = (1 - beta_k) U + beta_k M'
//! ```
//!
//! where `U` is the averaged slow-channel noise whose shadow iterate
//! `z = y - U` converts summed residual bounds into last-iterate bounds.
//! Noise is drawn from a per-run deterministic stream in a fixed order (fast
//! channel first), so a trajectory is a pure function of its seed and
//! arguments and runs are bit-reproducible regardless of scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::operators::{DriftPair, OperatorError, ProjectionRegion};
use crate::schedules::StepSchedule;

/// Runs whose iterate norms exceed this are marked diverged; aggressive step
/// sizes are known to push iterates to astronomical magnitudes, and the
/// harness reports diverged-run counts instead of poisoning aggregates.
pub const DIVERGENCE_LIMIT: f64 = 1e10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("horizon must be >= 1")]
    InvalidHorizon,
    #[error("stride must be >= 1")]
    InvalidStride,
    #[error("projected variant requires a projection region on the drift pair")]
    MissingRegion,
    #[error("initial state has dims ({x}, {y}), drift pair expects ({dx}, {dy})")]
    DimensionMismatch { x: usize, y: usize, dx: usize, dy: usize },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Non-finite drift output aborts a run with the offending state attached.
#[derive(Debug, Error)]
#[error("non-finite drift at step {k}")]
pub struct NonFiniteDrift {
    pub k: u64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

/// Per-channel noise distribution. `LinearPerturbation` models observing
/// every matrix and vector of a linear drift through fresh i.i.d. Gaussian
/// entry noise: for output coordinate `i` it draws an intercept `g_i`, one
/// deviate per `x` coordinate and one per `y` coordinate (in that order) and
/// emits `sigma * (g_i - <G_i, x> - <G'_i, y>)`, a martingale difference
/// whose conditional variance grows with `1 + |x|^2 + |y|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    None,
    GaussianIid { sigma: f64 },
    LinearPerturbation { sigma: f64 },
}

impl NoiseKind {
    pub fn is_none(&self) -> bool {
        matches!(self, NoiseKind::None)
    }

    fn sample_into(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        rng: &mut ChaCha8Rng,
        out: &mut DVector<f64>,
    ) {
        match *self {
            NoiseKind::None => out.fill(0.0),
            NoiseKind::GaussianIid { sigma } => {
                for o in out.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = sigma * g;
                }
            }
            NoiseKind::LinearPerturbation { sigma } => {
                let xs = x.as_slice();
                let ys = y.as_slice();
                for o in out.iter_mut() {
                    let mut acc: f64 = rng.sample(StandardNormal);
                    for &xj in xs {
                        let g: f64 = rng.sample(StandardNormal);
                        acc -= g * xj;
                    }
                    for &yj in ys {
                        let g: f64 = rng.sample(StandardNormal);
                        acc -= g * yj;
                    }
                    *o = sigma * acc;
                }
            }
        }
    }
}

/// Martingale-difference noise generators for the two channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub fast: NoiseKind,
    pub slow: NoiseKind,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { fast: NoiseKind::None, slow: NoiseKind::None };

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            fast: NoiseKind::GaussianIid { sigma },
            slow: NoiseKind::GaussianIid { sigma },
        }
    }

    pub fn linear_perturbation(sigma: f64) -> Self {
        Self {
            fast: NoiseKind::LinearPerturbation { sigma },
            slow: NoiseKind::LinearPerturbation { sigma },
        }
    }

    /// Draws the fast-channel noise at the current state. The fast channel is
    /// always sampled before the slow one.
    pub fn sample_fast(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        rng: &mut ChaCha8Rng,
        out: &mut DVector<f64>,
    ) {
        self.fast.sample_into(x, y, rng, out);
    }

    pub fn sample_slow(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        rng: &mut ChaCha8Rng,
        out: &mut DVector<f64>,
    ) {
        self.slow.sample_into(x, y, rng, out);
    }
}

/// Mutable state of one run: step counter, the coupled iterates, the
/// averaged slow-noise `U` (`U_0 = 0`), and the per-run random stream.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub k: u64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub avg_noise: DVector<f64>,
    pub rng: ChaCha8Rng,
}

impl IterationState {
    pub fn new(x0: DVector<f64>, y0: DVector<f64>, seed: u64) -> Self {
        let avg_noise = DVector::zeros(y0.len());
        Self { k: 0, x: x0, y: y0, avg_noise, rng: rng_from_seed(seed) }
    }
}

/// Scratch buffers reused across steps so the hot loop performs no
/// allocation.
#[derive(Debug, Clone)]
pub struct StepBuffers {
    fast_drift: DVector<f64>,
    slow_drift: DVector<f64>,
    fast_noise: DVector<f64>,
    slow_noise: DVector<f64>,
}

impl StepBuffers {
    pub fn new(d1: usize, d2: usize) -> Self {
        Self {
            fast_drift: DVector::zeros(d1),
            slow_drift: DVector::zeros(d2),
            fast_noise: DVector::zeros(d1),
            slow_noise: DVector::zeros(d2),
        }
    }

    /// Realized slow-channel noise of the most recent step.
    pub fn last_slow_noise(&self) -> &DVector<f64> {
        &self.slow_noise
    }
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|a| a.is_finite())
}

fn step_inner(
    state: &mut IterationState,
    drift: &DriftPair,
    sched: &StepSchedule,
    noise: &NoiseModel,
    region: Option<&ProjectionRegion>,
    buf: &mut StepBuffers,
) -> Result<(), NonFiniteDrift> {
    let (alpha, beta) = sched.step_at(state.k);

    drift.fast_drift_into(&state.x, &state.y, &mut buf.fast_drift);
    drift.slow_drift_into(&state.x, &state.y, &mut buf.slow_drift);
    if !all_finite(&buf.fast_drift) || !all_finite(&buf.slow_drift) {
        return Err(NonFiniteDrift { k: state.k, x: state.x.clone(), y: state.y.clone() });
    }

    // Fixed draw order: fast channel first, then slow.
    noise.sample_fast(&state.x, &state.y, &mut state.rng, &mut buf.fast_noise);
    noise.sample_slow(&state.x, &state.y, &mut state.rng, &mut buf.slow_noise);

    {
        let x = state.x.as_mut_slice();
        let d = buf.fast_drift.as_slice();
        let m = buf.fast_noise.as_slice();
        for i in 0..x.len() {
            x[i] += alpha * (d[i] + m[i]);
        }
    }
    if let Some(region) = region {
        // Region dims are checked once at run start; a mismatch here is a bug.
        region.project_in_place(&mut state.x).expect("projection region dims verified at start");
    }
    {
        let y = state.y.as_mut_slice();
        let u = state.avg_noise.as_mut_slice();
        let d = buf.slow_drift.as_slice();
        let m = buf.slow_noise.as_slice();
        for i in 0..y.len() {
            y[i] += beta * (d[i] + m[i]);
            u[i] = (1.0 - beta) * u[i] + beta * m[i];
        }
    }
    state.k += 1;
    Ok(())
}

/// One step of the plain coupled iteration.
pub fn step_plain(
    state: &mut IterationState,
    drift: &DriftPair,
    sched: &StepSchedule,
    noise: &NoiseModel,
    buf: &mut StepBuffers,
) -> Result<(), NonFiniteDrift> {
    step_inner(state, drift, sched, noise, None, buf)
}

/// One step of the projected variant: identical to [`step_plain`] except the
/// fast iterate is projected onto `region` after its update.
pub fn step_projected(
    state: &mut IterationState,
    drift: &DriftPair,
    sched: &StepSchedule,
    noise: &NoiseModel,
    region: &ProjectionRegion,
    buf: &mut StepBuffers,
) -> Result<(), NonFiniteDrift> {
    step_inner(state, drift, sched, noise, Some(region), buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Projected,
}

/// A recorded state `(k, x, y, U)`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub k: u64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub avg_noise: DVector<f64>,
}

impl Sample {
    /// The denoised shadow iterate `z = y - U`.
    pub fn shadow_z(&self) -> DVector<f64> {
        &self.y - &self.avg_noise
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    Diverged { at: u64 },
    Failed { at: u64, reason: String },
}

/// Strided record of one run. Samples sit at `k = 0`, every multiple of the
/// stride, and the horizon; for diverged or failed runs the record stops at
/// the last healthy sample and the outcome carries the failure index.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub stride: u64,
    pub samples: Vec<Sample>,
    pub outcome: RunOutcome,
    /// Realized slow-channel noise per step, kept only when requested.
    pub slow_noise_log: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    pub fn terminal(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub horizon: u64,
    pub stride: u64,
    pub seed: u64,
    pub variant: Variant,
    /// Log every realized slow-channel noise draw (for shadow-recurrence
    /// audits; memory-heavy, off in normal experiments).
    pub record_slow_noise: bool,
}

impl RunOptions {
    pub fn new(horizon: u64, stride: u64, seed: u64, variant: Variant) -> Self {
        Self { horizon, stride, seed, variant, record_slow_noise: false }
    }
}

/// Runs the chosen variant from the given initial condition and records a
/// strided trajectory. The result is a deterministic function of all
/// arguments including the seed; noise-free runs never touch the stream.
pub fn run(
    drift: &DriftPair,
    sched: &StepSchedule,
    noise: &NoiseModel,
    init: (&DVector<f64>, &DVector<f64>),
    opts: &RunOptions,
) -> Result<Trajectory, EngineError> {
    if opts.horizon < 1 {
        return Err(EngineError::InvalidHorizon);
    }
    if opts.stride < 1 {
        return Err(EngineError::InvalidStride);
    }
    let (x0, y0) = init;
    if x0.len() != drift.dims.0 || y0.len() != drift.dims.1 {
        return Err(EngineError::DimensionMismatch {
            x: x0.len(),
            y: y0.len(),
            dx: drift.dims.0,
            dy: drift.dims.1,
        });
    }
    let region = match opts.variant {
        Variant::Plain => None,
        Variant::Projected => Some(drift.region.as_ref().ok_or(EngineError::MissingRegion)?),
    };

    // The projected variant starts from the projected initial point, so every
    // recorded fast iterate is feasible; this also surfaces dimension
    // mismatches before stepping.
    let mut x_start = x0.clone();
    if let Some(region) = region {
        region.project_in_place(&mut x_start)?;
    }
    let mut state = IterationState::new(x_start, y0.clone(), opts.seed);
    let mut buf = StepBuffers::new(drift.dims.0, drift.dims.1);
    let mut samples = Vec::with_capacity((opts.horizon / opts.stride + 2) as usize);
    let mut noise_log = opts.record_slow_noise.then(Vec::new);

    let outcome = loop {
        if state.k % opts.stride == 0 || state.k == opts.horizon {
            samples.push(Sample {
                k: state.k,
                x: state.x.clone(),
                y: state.y.clone(),
                avg_noise: state.avg_noise.clone(),
            });
        }
        if state.k == opts.horizon {
            break RunOutcome::Completed;
        }
        if let Err(err) = step_inner(&mut state, drift, sched, noise, region, &mut buf) {
            break RunOutcome::Failed { at: err.k, reason: err.to_string() };
        }
        if let Some(log) = noise_log.as_mut() {
            log.push(buf.slow_noise.clone());
        }
        if state.x.norm() + state.y.norm() > DIVERGENCE_LIMIT {
            break RunOutcome::Diverged { at: state.k };
        }
    };

    Ok(Trajectory { stride: opts.stride, samples, outcome, slow_noise_log: noise_log })
}

/// SplitMix64 finalizer; the documented per-run seed derivation is
/// `mix64(master + GOLDEN * (index + 1))` so that run streams are
/// independent of scheduling and worker count.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const INSTANCE_TAG: u64 = 0x5EED_FACE_0000_0001;

/// Seed of the random stream for run `run_index` under a master seed.
pub fn run_seed(master: u64, run_index: u64) -> u64 {
    mix64(master.wrapping_add(GOLDEN.wrapping_mul(run_index.wrapping_add(1))))
}

/// Seed of the stream used to construct the problem instance itself.
pub fn instance_seed(master: u64) -> u64 {
    mix64(master ^ INSTANCE_TAG)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorConstants;
    use nalgebra::dvector;

    fn toy_constants() -> OperatorConstants {
        OperatorConstants { mu: 0.5, lipschitz: 1.0, rho: 0.5, cocoercivity: None }
    }

    /// Scalar linear system in the raw form of a two-by-two block iteration:
    /// a11 = 1, a12 = a21 = 1, a22 = 2, b1 = b2 = 0.
    fn scalar_linear_drift() -> DriftPair {
        DriftPair::new(
            (1, 1),
            toy_constants(),
            None,
            |x, y, out| out[0] = -x[0] - y[0],
            |x, y, out| out[0] = -x[0] - 2.0 * y[0],
        )
    }

    fn sched(alpha: f64, beta: f64) -> StepSchedule {
        StepSchedule::new(alpha, beta, 0.55, 0.85, 1.0).unwrap()
    }

    #[test]
    fn one_step_matches_hand_computation() {
        // alpha_0 = 0.1, beta_0 = 0.01 (offset 1), start (1, 1):
        // x1 = 1 + 0.1 (0 - 1 - 1) = 0.8, y1 = 1 + 0.01 (0 - 1 - 2) = 0.97.
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.01);
        let mut state = IterationState::new(dvector![1.0], dvector![1.0], 7);
        let mut buf = StepBuffers::new(1, 1);
        step_plain(&mut state, &drift, &s, &NoiseModel::NONE, &mut buf).unwrap();
        assert!((state.x[0] - 0.8).abs() < 1e-15);
        assert!((state.y[0] - 0.97).abs() < 1e-15);
        assert_eq!(state.k, 1);
    }

    #[test]
    fn fixed_point_is_stationary_without_noise() {
        // Joint fixed point of the scalar system is the origin.
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.01);
        let mut state = IterationState::new(dvector![0.0], dvector![0.0], 7);
        let mut buf = StepBuffers::new(1, 1);
        for _ in 0..10 {
            step_plain(&mut state, &drift, &s, &NoiseModel::NONE, &mut buf).unwrap();
        }
        assert_eq!(state.x[0], 0.0);
        assert_eq!(state.y[0], 0.0);
        assert_eq!(state.k, 10);
    }

    #[test]
    fn zero_slow_drift_freezes_y() {
        let drift = DriftPair::new(
            (1, 1),
            toy_constants(),
            None,
            |x, _, out| out[0] = -0.5 * x[0],
            |_, _, out| out[0] = 0.0,
        );
        let s = sched(0.1, 0.01);
        let opts = RunOptions::new(50, 1, 3, Variant::Plain);
        let traj = run(&drift, &s, &NoiseModel::NONE, (&dvector![1.0], &dvector![0.7]), &opts)
            .unwrap();
        for sample in &traj.samples {
            assert_eq!(sample.y[0], 0.7);
        }
    }

    #[test]
    fn rejects_bad_horizon_and_stride() {
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.01);
        let init = (dvector![1.0], dvector![1.0]);
        let opts = RunOptions::new(0, 1, 3, Variant::Plain);
        assert!(matches!(
            run(&drift, &s, &NoiseModel::NONE, (&init.0, &init.1), &opts),
            Err(EngineError::InvalidHorizon)
        ));
        let opts = RunOptions::new(10, 0, 3, Variant::Plain);
        assert!(matches!(
            run(&drift, &s, &NoiseModel::NONE, (&init.0, &init.1), &opts),
            Err(EngineError::InvalidStride)
        ));
    }

    #[test]
    fn equal_seeds_reproduce_bitwise() {
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.01);
        let init = (dvector![1.0], dvector![1.0]);
        let opts = RunOptions::new(200, 7, 99, Variant::Plain);
        let noise = NoiseModel::gaussian(0.5);
        let a = run(&drift, &s, &noise, (&init.0, &init.1), &opts).unwrap();
        let b = run(&drift, &s, &noise, (&init.0, &init.1), &opts).unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.k, sb.k);
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.y, sb.y);
            assert_eq!(sa.avg_noise, sb.avg_noise);
        }
    }

    #[test]
    fn noise_free_runs_ignore_the_stream() {
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.01);
        let init = (dvector![1.0], dvector![1.0]);
        let a = run(
            &drift,
            &s,
            &NoiseModel::NONE,
            (&init.0, &init.1),
            &RunOptions::new(100, 10, 1, Variant::Plain),
        )
        .unwrap();
        let b = run(
            &drift,
            &s,
            &NoiseModel::NONE,
            (&init.0, &init.1),
            &RunOptions::new(100, 10, 123_456, Variant::Plain),
        )
        .unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.y, sb.y);
        }
    }

    #[test]
    fn all_space_projection_matches_plain() {
        let mut drift = scalar_linear_drift();
        drift.region = Some(ProjectionRegion::AllSpace);
        let s = sched(0.1, 0.01);
        let init = (dvector![1.0], dvector![1.0]);
        let noise = NoiseModel::gaussian(0.3);
        let a = run(&drift, &s, &noise, (&init.0, &init.1), &RunOptions::new(100, 10, 5, Variant::Plain))
            .unwrap();
        let b = run(
            &drift,
            &s,
            &noise,
            (&init.0, &init.1),
            &RunOptions::new(100, 10, 5, Variant::Projected),
        )
        .unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.y, sb.y);
        }
    }

    #[test]
    fn projected_iterates_stay_feasible() {
        // Strong outward drift: unprojected x would leave the ball at once.
        let drift = DriftPair::new(
            (2, 1),
            toy_constants(),
            Some(ProjectionRegion::ball(DVector::zeros(2), 1.5)),
            |x, _, out| {
                out[0] = 10.0 - x[0];
                out[1] = -x[1];
            },
            |_, _, out| out[0] = 0.0,
        );
        let s = StepSchedule::new(0.5, 0.1, 0.55, 0.85, 1.0).unwrap();
        let traj = run(
            &drift,
            &s,
            &NoiseModel::gaussian(1.0),
            (&dvector![0.0, 0.0], &dvector![0.0]),
            &RunOptions::new(500, 25, 11, Variant::Projected),
        )
        .unwrap();
        let region = drift.region.as_ref().unwrap();
        for sample in &traj.samples {
            assert!(region.contains(&sample.x, 1e-9));
        }
        // The drift saturates the constraint, so late iterates sit on the
        // boundary.
        let last = traj.terminal().unwrap();
        assert!((last.x.norm() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn projected_step_clamps_interval() {
        // Scalar case: the fast update lands at 2.8 and is clamped to 2.
        let drift = DriftPair::new(
            (1, 1),
            toy_constants(),
            Some(ProjectionRegion::Box { lo: dvector![-2.0], hi: dvector![2.0] }),
            |_, _, out| out[0] = 18.0,
            |_, _, out| out[0] = 0.0,
        );
        let s = StepSchedule::new(0.1, 0.01, 0.55, 0.85, 1.0).unwrap(); // alpha_0 = 0.1
        let mut state = IterationState::new(dvector![1.0], dvector![0.0], 0);
        let mut buf = StepBuffers::new(1, 1);
        let region = drift.region.clone().unwrap();
        step_projected(&mut state, &drift, &s, &NoiseModel::NONE, &region, &mut buf).unwrap();
        // Unprojected target: 1 + 0.1 * 18 = 2.8.
        assert_eq!(state.x[0], 2.0);
    }

    #[test]
    fn projected_requires_region() {
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.01);
        let init = (dvector![1.0], dvector![1.0]);
        assert!(matches!(
            run(&drift, &s, &NoiseModel::NONE, (&init.0, &init.1), &RunOptions::new(10, 1, 0, Variant::Projected)),
            Err(EngineError::MissingRegion)
        ));
    }

    #[test]
    fn shadow_recurrence_holds_exactly() {
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.05);
        let init = (dvector![1.0], dvector![1.0]);
        let mut opts = RunOptions::new(300, 1, 17, Variant::Plain);
        opts.record_slow_noise = true;
        let noise = NoiseModel::gaussian(0.7);
        let traj = run(&drift, &s, &noise, (&init.0, &init.1), &opts).unwrap();
        let log = traj.slow_noise_log.as_ref().unwrap();
        assert_eq!(traj.samples[0].avg_noise[0], 0.0, "U_0 = 0");
        for w in traj.samples.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            let beta = s.beta_at(prev.k);
            let m = &log[prev.k as usize];
            // Same floating-point expression as the in-loop update.
            let expected = (1.0 - beta) * prev.avg_noise[0] + beta * m[0];
            assert_eq!(next.avg_noise[0], expected);
        }
    }

    #[test]
    fn logged_noise_reconstructs_slow_drift() {
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.05);
        let init = (dvector![0.5], dvector![-0.25]);
        let mut opts = RunOptions::new(200, 1, 29, Variant::Plain);
        opts.record_slow_noise = true;
        let noise = NoiseModel::gaussian(0.7);
        let traj = run(&drift, &s, &noise, (&init.0, &init.1), &opts).unwrap();
        let log = traj.slow_noise_log.as_ref().unwrap();
        for w in traj.samples.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            let beta = s.beta_at(prev.k);
            let m = &log[prev.k as usize];
            let recovered = next.y[0] - prev.y[0] - beta * m[0];
            let drift_val = drift.slow_drift(&prev.x, &prev.y)[0];
            assert!((recovered - beta * drift_val).abs() < 1e-10);
            // And the shadow iterate advances by exactly the drift plus the
            // averaged-noise correction.
            let z_next = next.shadow_z()[0];
            let z_prev = prev.shadow_z()[0];
            let expected = beta * (drift_val + prev.avg_noise[0]);
            assert!((z_next - z_prev - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn shadow_z_edge_cases() {
        let sample = Sample {
            k: 0,
            x: dvector![1.0],
            y: dvector![2.0, 3.0],
            avg_noise: dvector![0.0, 0.0],
        };
        assert_eq!(sample.shadow_z(), dvector![2.0, 3.0]);
        let sample = Sample {
            k: 5,
            x: dvector![1.0],
            y: dvector![2.0, 3.0],
            avg_noise: dvector![2.0, 3.0],
        };
        assert_eq!(sample.shadow_z(), dvector![0.0, 0.0]);
    }

    #[test]
    fn divergent_run_is_marked() {
        // Expansive drift: x grows geometrically until the guard trips.
        let drift = DriftPair::new(
            (1, 1),
            toy_constants(),
            None,
            |x, _, out| out[0] = 5.0 * x[0],
            |_, _, out| out[0] = 0.0,
        );
        let s = StepSchedule::new(0.5, 0.1, 0.55, 0.85, 1.0).unwrap();
        let traj = run(
            &drift,
            &s,
            &NoiseModel::NONE,
            (&dvector![1.0], &dvector![0.0]),
            &RunOptions::new(10_000, 100, 3, Variant::Plain),
        )
        .unwrap();
        assert!(matches!(traj.outcome, RunOutcome::Diverged { .. }));
        assert!(!traj.completed());
    }

    #[test]
    fn non_finite_drift_fails_with_diagnostic() {
        let drift = DriftPair::new(
            (1, 1),
            toy_constants(),
            None,
            |x, _, out| out[0] = (x[0] - 2.0).ln(),
            |_, _, out| out[0] = 0.0,
        );
        let s = sched(0.1, 0.01);
        let traj = run(
            &drift,
            &s,
            &NoiseModel::NONE,
            (&dvector![1.0], &dvector![0.0]),
            &RunOptions::new(10, 1, 3, Variant::Plain),
        )
        .unwrap();
        match traj.outcome {
            RunOutcome::Failed { at, .. } => assert_eq!(at, 0),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn sample_grid_includes_endpoints() {
        let drift = scalar_linear_drift();
        let s = sched(0.1, 0.01);
        let init = (dvector![1.0], dvector![1.0]);
        let traj = run(
            &drift,
            &s,
            &NoiseModel::NONE,
            (&init.0, &init.1),
            &RunOptions::new(105, 20, 3, Variant::Plain),
        )
        .unwrap();
        let ks: Vec<u64> = traj.samples.iter().map(|s| s.k).collect();
        assert_eq!(ks, vec![0, 20, 40, 60, 80, 100, 105]);
    }

    #[test]
    fn gaussian_noise_is_centered() {
        // Empirical mean over many draws at a frozen state stays within
        // 5 sigma / sqrt(n) per the martingale-difference requirement.
        let noise = NoiseModel::gaussian(2.0);
        let mut rng = rng_from_seed(4242);
        let x = dvector![1.0, -2.0];
        let y = dvector![0.5];
        let n = 100_000usize;
        let mut sum = DVector::zeros(2);
        let mut buf = DVector::zeros(2);
        for _ in 0..n {
            noise.sample_fast(&x, &y, &mut rng, &mut buf);
            sum += &buf;
        }
        let mean = sum / n as f64;
        assert!(mean.norm() <= 5.0 * 2.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn linear_perturbation_noise_is_centered_and_state_scaled() {
        let kind = NoiseKind::LinearPerturbation { sigma: 0.5 };
        let mut rng = rng_from_seed(99);
        let x = dvector![3.0, 0.0];
        let y = dvector![4.0];
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut buf = DVector::zeros(2);
        for _ in 0..n {
            kind.sample_into(&x, &y, &mut rng, &mut buf);
            sum += buf[0];
            sumsq += buf[0] * buf[0];
        }
        let mean = sum / n as f64;
        // Var = sigma^2 (1 + |x|^2 + |y|^2) = 0.25 * 26.
        let var: f64 = 0.25 * (1.0 + 9.0 + 16.0);
        assert!(mean.abs() <= 5.0 * var.sqrt() / (n as f64).sqrt());
        assert!((sumsq / n as f64 - var).abs() < 0.15 * var);
    }

    #[test]
    fn seed_mixing_spreads_indices() {
        let a = run_seed(1, 0);
        let b = run_seed(1, 1);
        let c = run_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(instance_seed(1), run_seed(1, 0));
    }
}
