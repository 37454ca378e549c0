//! Benchmark problem families: strongly-concave/convex minimax optimization,
//! linear systems with a semidefinite slow block, Lagrangian constrained
//! optimization with block-ball constraints, and a non-convex
//! gradient-descent slow time-scale.
//!
//! Each builder draws an instance from a seeded stream, declares its operator
//! constants, and assembles the drift pair together with analytic residual
//! oracles. Instances are plain serializable data; [`Problem::from_instance`]
//! rebuilds the executable problem from a stored instance so experiments can
//! be regenerated from a manifest.

mod gradient;
mod lagrangian;
mod linear;
mod minimax;

pub use gradient::{build_gradient_variant, GradientVariantInstance};
pub use lagrangian::{build_lagrangian, LagrangianInstance};
pub use linear::{build_linear, LinearInstance};
pub use minimax::{build_minimax, MinimaxInstance};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{NoiseModel, Variant};
use crate::operators::DriftPair;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("dimension must be >= 1")]
    EmptyDimension,
    #[error("delta rank must satisfy 1 <= rank <= dimension, got {rank} for d={dim}")]
    BadDeltaRank { rank: usize, dim: usize },
    #[error("constraint dimension d2={d2} must not exceed d1={d1}")]
    ConstraintTooWide { d1: usize, d2: usize },
    #[error("d1={d1} must be divisible by the number of blocks {blocks}")]
    BlocksDontDivide { d1: usize, blocks: usize },
    #[error("failed to draw a well-conditioned constraint matrix in {0} attempts")]
    SingularRedrawLimit(usize),
    #[error("contraction factor must lie in (0,1), got {0}")]
    BadContraction(f64),
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("construction identity violated: {0}")]
    ConstructionIdentity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    Linear,
    Minimax,
    Lagrangian,
    GradientVariant,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Linear => "linear",
            ProblemKind::Minimax => "minimax",
            ProblemKind::Lagrangian => "lagrangian",
            ProblemKind::GradientVariant => "gradient_variant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ProblemKind::Linear),
            "minimax" => Some(ProblemKind::Minimax),
            "lagrangian" => Some(ProblemKind::Lagrangian),
            "gradient_variant" => Some(ProblemKind::GradientVariant),
            _ => None,
        }
    }
}

/// Serializable instance data for any problem family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Instance {
    Linear(LinearInstance),
    Minimax(MinimaxInstance),
    Lagrangian(LagrangianInstance),
    GradientVariant(GradientVariantInstance),
}

impl Instance {
    pub fn kind(&self) -> ProblemKind {
        match self {
            Instance::Linear(_) => ProblemKind::Linear,
            Instance::Minimax(_) => ProblemKind::Minimax,
            Instance::Lagrangian(_) => ProblemKind::Lagrangian,
            Instance::GradientVariant(_) => ProblemKind::GradientVariant,
        }
    }
}

/// Result of a fixed-point oracle query; `converged = false` marks the point
/// as unusable (the metrics layer then skips the residual).
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub point: DVector<f64>,
    pub converged: bool,
}

impl OracleOutcome {
    fn exact(point: DVector<f64>) -> Self {
        Self { point, converged: true }
    }
}

/// An executable problem: the drift pair, the instance's initial condition,
/// the noise model matching the source experiment, and the instance data.
/// Immutable after construction and safe to share across concurrent runs.
pub struct Problem {
    pub kind: ProblemKind,
    pub drift: DriftPair,
    pub init: (DVector<f64>, DVector<f64>),
    pub default_noise: NoiseModel,
    pub instance: Instance,
}

impl Problem {
    /// Rebuilds the executable problem from stored instance data.
    pub fn from_instance(instance: Instance) -> Self {
        match instance {
            Instance::Linear(inst) => linear::assemble(inst),
            Instance::Minimax(inst) => minimax::assemble(inst),
            Instance::Lagrangian(inst) => lagrangian::assemble(inst),
            Instance::GradientVariant(inst) => gradient::assemble(inst),
        }
    }

    /// The tracking target of the fast variable at slow state `y`: the fixed
    /// point `x*(y)` for plain runs, the projected fixed point `x^(y)` for
    /// projected runs. `warm` starts iterative solves from a previous
    /// solution; closed-form oracles ignore it.
    pub fn x_ref(
        &self,
        y: &DVector<f64>,
        variant: Variant,
        warm: Option<&DVector<f64>>,
    ) -> OracleOutcome {
        match (&self.instance, variant) {
            (Instance::Linear(inst), _) => OracleOutcome::exact(inst.x_star(y)),
            (Instance::Minimax(inst), Variant::Plain) => {
                OracleOutcome::exact(inst.x_star_unconstrained(y))
            }
            (Instance::Minimax(inst), Variant::Projected) => OracleOutcome::exact(inst.x_star(y)),
            (Instance::Lagrangian(inst), Variant::Plain) => {
                OracleOutcome::exact(inst.x_star_unconstrained(y))
            }
            (Instance::Lagrangian(inst), Variant::Projected) => {
                let res = inst.x_hat(y, warm);
                OracleOutcome { point: res.point, converged: res.converged }
            }
            (Instance::GradientVariant(_), _) => OracleOutcome::exact(y.clone()),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearInstance> {
        match &self.instance {
            Instance::Linear(inst) => Some(inst),
            _ => None,
        }
    }

    pub fn as_minimax(&self) -> Option<&MinimaxInstance> {
        match &self.instance {
            Instance::Minimax(inst) => Some(inst),
            _ => None,
        }
    }

    pub fn as_lagrangian(&self) -> Option<&LagrangianInstance> {
        match &self.instance {
            Instance::Lagrangian(inst) => Some(inst),
            _ => None,
        }
    }

    pub fn as_gradient_variant(&self) -> Option<&GradientVariantInstance> {
        match &self.instance {
            Instance::GradientVariant(inst) => Some(inst),
            _ => None,
        }
    }
}
