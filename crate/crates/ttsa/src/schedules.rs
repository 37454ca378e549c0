//! Power-law step-size schedules and their admissibility validators.
//!
//! Both step sequences have the form `alpha_k = alpha / (k + K1)^a` and
//! `beta_k = beta / (k + K1)^b`. The validators evaluate every admissibility
//! condition as an executable predicate and report numeric margins; they
//! never abort a run, since deliberately inadmissible schedules are part of
//! the experiment protocol.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Comparisons of derived exponents (e.g. `2b >= 3a`) are meant to admit the
/// exact-boundary choices such as `(a, b) = (0.4, 0.6)`; this slack absorbs
/// the floating-point error of `3.0 * a` style expressions.
const BOUNDARY_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("{name} must be a positive finite number, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must lie in (0, 1), got {value}")]
    ExponentRange { name: &'static str, value: f64 },
    #[error("offset must be >= 1, got {0}")]
    OffsetTooSmall(f64),
}

/// The `(alpha, beta, a, b, K1)` parameterization of the two step sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub alpha_coeff: f64,
    pub beta_coeff: f64,
    pub exp_fast: f64,
    pub exp_slow: f64,
    pub offset: f64,
}

impl StepSchedule {
    /// Builds a schedule, enforcing only the structural constraints
    /// (positivity, exponents in `(0, 1)`, offset at least one). The finer
    /// admissibility conditions are checked by [`validate_main`] and
    /// [`validate_gradient_variant`] so that inadmissible-but-runnable
    /// schedules remain constructible.
    pub fn new(
        alpha_coeff: f64,
        beta_coeff: f64,
        exp_fast: f64,
        exp_slow: f64,
        offset: f64,
    ) -> Result<Self, ScheduleError> {
        for (name, value) in [("alpha", alpha_coeff), ("beta", beta_coeff)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ScheduleError::NonPositive { name, value });
            }
        }
        for (name, value) in [("exp_fast", exp_fast), ("exp_slow", exp_slow)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ScheduleError::ExponentRange { name, value });
            }
        }
        if !(offset >= 1.0 && offset.is_finite()) {
            return Err(ScheduleError::OffsetTooSmall(offset));
        }
        Ok(Self { alpha_coeff, beta_coeff, exp_fast, exp_slow, offset })
    }

    pub fn alpha_at(&self, k: u64) -> f64 {
        self.alpha_coeff / (k as f64 + self.offset).powf(self.exp_fast)
    }

    pub fn beta_at(&self, k: u64) -> f64 {
        self.beta_coeff / (k as f64 + self.offset).powf(self.exp_slow)
    }

    /// `(alpha_k, beta_k)` for step `k`.
    pub fn step_at(&self, k: u64) -> (f64, f64) {
        (self.alpha_at(k), self.beta_at(k))
    }

    /// Predicted decay exponents of the fast and slow mean-square residuals:
    /// the fast error decays like `1/(k+1)^a`, the slow one like
    /// `1/(k+1)^(1-b)`.
    pub fn theoretical_exponents(&self) -> (f64, f64) {
        (self.exp_fast, 1.0 - self.exp_slow)
    }

    /// `sup_k beta_k^2 / alpha_k^3`, evaluated in closed form. The ratio is
    /// `(beta^2/alpha^3) (k+K1)^(3a-2b)`: non-increasing in `k` (maximum at
    /// `k = 0`) exactly when `2b >= 3a`, and unbounded otherwise.
    pub fn sup_step_ratio(&self) -> f64 {
        let gap = 3.0 * self.exp_fast - 2.0 * self.exp_slow;
        let gap = if gap.abs() < BOUNDARY_SLACK { 0.0 } else { gap };
        if gap > 0.0 {
            return f64::INFINITY;
        }
        self.beta_coeff.powi(2) / self.alpha_coeff.powi(3) * self.offset.powf(gap)
    }
}

/// One validated condition: `satisfied` records the verdict, `lhs` and
/// `threshold` the two sides of the comparison for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub satisfied: bool,
    pub lhs: f64,
    pub threshold: f64,
}

/// Outcome of a validator run. `gamma1`/`gamma2` carry the coefficient-ratio
/// and offset thresholds when the validator computes them. When the offset
/// check fails, `deferred_valid_from` is the first index `k* = ceil(gamma2 -
/// K1)` from which the finite-time bounds apply anyway.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub overall: bool,
    pub deferred_valid_from: Option<u64>,
}

impl ValidationReport {
    fn from_checks(checks: Vec<CheckResult>, gamma1: Option<f64>, gamma2: Option<f64>) -> Self {
        let overall = checks.iter().all(|c| c.satisfied);
        Self { checks, gamma1, gamma2, overall, deferred_valid_from: None }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn is_satisfied(&self, name: &str) -> bool {
        self.check(name).map(|c| c.satisfied).unwrap_or(false)
    }
}

fn check_le(name: &'static str, lhs: f64, threshold: f64) -> CheckResult {
    CheckResult { name, satisfied: lhs <= threshold, lhs, threshold }
}

fn check_lt(name: &'static str, lhs: f64, threshold: f64) -> CheckResult {
    CheckResult { name, satisfied: lhs < threshold, lhs, threshold }
}

fn check_ge(name: &'static str, lhs: f64, threshold: f64) -> CheckResult {
    CheckResult { name, satisfied: lhs >= threshold, lhs, threshold }
}

/// Validates a schedule against the admissibility conditions of the coupled
/// iteration with a `mu`-contractive fast map and `lipschitz`-Lipschitz
/// drift fields: exponent ordering `0.5 < a < b < 1`, coefficient caps
/// `alpha, beta <= 0.5`, `K1 >= 1`, the time-scale separation
/// `sup_k beta_k^2/alpha_k^3 <= 1`, the coefficient ratio `beta/alpha <=
/// gamma1 = (1-mu)/(2 L^2)`, and the offset threshold `K1 >= gamma2`.
pub fn validate_main(sched: &StepSchedule, mu: f64, lipschitz: f64) -> ValidationReport {
    let a = sched.exp_fast;
    let b = sched.exp_slow;
    let alpha = sched.alpha_coeff;
    let beta = sched.beta_coeff;

    let gamma1 = (1.0 - mu) / (2.0 * lipschitz * lipschitz);
    let gamma2 = ((2.0 * a) / (mu * alpha))
        .powf(1.0 / (1.0 - a))
        .max(((2.0 * b) / beta).powf(1.0 / (1.0 - b)));

    let checks = vec![
        CheckResult { name: "exp_fast_above_half", satisfied: a > 0.5, lhs: a, threshold: 0.5 },
        check_lt("exp_order", a, b),
        check_lt("exp_slow_below_one", b, 1.0),
        check_le("alpha_coeff_bound", alpha, 0.5),
        check_le("beta_coeff_bound", beta, 0.5),
        check_ge("offset_minimum", sched.offset, 1.0),
        check_le("step_ratio_summability", sched.sup_step_ratio(), 1.0),
        check_le("coefficient_ratio", beta / alpha, gamma1),
        check_ge("offset_threshold", sched.offset, gamma2),
    ];

    let mut report = ValidationReport::from_checks(checks, Some(gamma1), Some(gamma2));
    if sched.offset < gamma2 {
        let k_star = (gamma2 - sched.offset).ceil();
        report.deferred_valid_from =
            Some(if k_star >= u64::MAX as f64 { u64::MAX } else { k_star as u64 });
    }
    report
}

/// Validates a schedule for the variant whose slow time-scale applies a
/// gradient-descent drift of a smooth objective: `a < b < 1`, `b > 0.5`,
/// `sup_k beta_k^2/alpha_k^3 <= 1`, and `beta_k alpha_k <= beta alpha /
/// (k+K1)` for all `k`, which for the power form is `a + b >= 1`. The fast
/// exponent may drop below 0.5 here (square-summability of `alpha_k` is not
/// required), so choices like `(a, b) = (0.4, 0.6)` are admissible.
pub fn validate_gradient_variant(sched: &StepSchedule) -> ValidationReport {
    let a = sched.exp_fast;
    let b = sched.exp_slow;
    let checks = vec![
        check_lt("exp_order", a, b),
        check_lt("exp_slow_below_one", b, 1.0),
        CheckResult { name: "exp_slow_above_half", satisfied: b > 0.5, lhs: b, threshold: 0.5 },
        check_le("step_ratio_summability", sched.sup_step_ratio(), 1.0),
        check_ge("step_product_decay", a + b, 1.0 - BOUNDARY_SLACK),
    ];
    ValidationReport::from_checks(checks, None, None)
}
