//! Two-time-scale stochastic approximation toolkit.
//!
//! Runs coupled fixed-point iterations where a fast variable `x` tracks the
//! fixed point of a contractive map while a slow variable `y` performs an
//! averaged (Krasnoselskii-Mann style) iteration of a non-expansive map,
//! both driven by martingale-difference noise:
//!
//! ```text
//! x_{k+1} = x_k + alpha_k (f(x_k, y_k) - x_k + M_{k+1})
//! y_{k+1} = y_k + beta_k (g(x_k, y_k) - y_k + M'_{k+1})
//! ```
//!
//! The crate provides power-law step schedules and executable validators for
//! their admissibility conditions ([`schedules`]), drift-field and projection
//! primitives plus operator transforms ([`operators`]), the iteration engine
//! with plain, projected and gradient variants ([`engine`]), four benchmark
//! problem families ([`problems`]), residual/rate metrics ([`metrics`]),
//! brute-force verification oracles ([`oracle`]), and a configuration-driven
//! multi-run experiment harness with CSV/SVG output ([`harness`]).

pub mod engine;
pub mod harness;
pub mod metrics;
pub mod operators;
pub mod oracle;
pub mod problems;
pub mod schedules;
