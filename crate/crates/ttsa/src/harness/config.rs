//! Flat key-value experiment configuration.
//!
//! Keys are namespaced (`problem.*`, `schedule.*`, `noise.*`, `run.*`),
//! `#` starts a comment, unknown or inapplicable keys are rejected with the
//! offending key named. [`ExperimentConfig::config_text`] emits the resolved
//! configuration in the same format, which is what the manifest embeds.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::engine::{NoiseKind, NoiseModel, Variant};
use crate::metrics::{default_kinds, ResidualKind};
use crate::problems::ProblemKind;
use crate::schedules::{ScheduleError, StepSchedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Malformed(usize),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown or inapplicable key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: expected {expected}, got `{got}`")]
    BadValue { key: String, expected: &'static str, got: String },
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Problem family plus its build parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Linear { d: usize, delta_rank: usize },
    Minimax { d: usize, x_radius: f64 },
    Lagrangian { d1: usize, d2: usize, blocks: usize, radius: f64 },
    GradientVariant { d: usize, mu: f64 },
}

impl ProblemSpec {
    pub fn kind(&self) -> ProblemKind {
        match self {
            ProblemSpec::Linear { .. } => ProblemKind::Linear,
            ProblemSpec::Minimax { .. } => ProblemKind::Minimax,
            ProblemSpec::Lagrangian { .. } => ProblemKind::Lagrangian,
            ProblemSpec::GradientVariant { .. } => ProblemKind::GradientVariant,
        }
    }
}

/// Fully resolved experiment description; every field has a definite value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub schedule: StepSchedule,
    pub noise: NoiseModel,
    pub horizon: u64,
    pub stride: u64,
    pub n_runs: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub variant: Variant,
    pub residual_kinds: Vec<ResidualKind>,
    pub output_dir: PathBuf,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
}

/// Per-problem default noise model, matching the source experiments: the
/// linear system perturbs all matrices and vectors, the minimax and gradient
/// problems observe noisy gradients on both channels, and the Lagrangian
/// multiplier update is noise-free.
pub fn default_noise(problem: ProblemKind) -> NoiseModel {
    match problem {
        ProblemKind::Linear => NoiseModel::linear_perturbation(1.0),
        ProblemKind::Minimax | ProblemKind::GradientVariant => NoiseModel::gaussian(1.0),
        ProblemKind::Lagrangian => {
            NoiseModel { fast: NoiseKind::GaussianIid { sigma: 1.0 }, slow: NoiseKind::None }
        }
    }
}

fn default_variant(problem: ProblemKind) -> Variant {
    match problem {
        ProblemKind::Minimax | ProblemKind::Lagrangian => Variant::Projected,
        ProblemKind::Linear | ProblemKind::GradientVariant => Variant::Plain,
    }
}

struct KeyBag {
    values: BTreeMap<String, String>,
}

impl KeyBag {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or(ConfigError::Malformed(idx + 1))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if values.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(Self { values })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(
        &mut self,
        key: &str,
        expected: &'static str,
    ) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                expected,
                got: raw,
            }),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some(key) = self.values.into_keys().next() {
            return Err(ConfigError::UnknownKey(key));
        }
        Ok(())
    }
}

fn parse_vector(raw: &str, key: &str) -> Result<Vec<f64>, ConfigError> {
    raw.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                expected: "comma-separated floats",
                got: raw.to_string(),
            })
        })
        .collect()
}

fn parse_noise_channel(
    bag: &mut KeyBag,
    kind_key: &str,
    sigma_key: &str,
    default: NoiseKind,
) -> Result<NoiseKind, ConfigError> {
    let kind_raw = bag.take(kind_key);
    let sigma = bag.take_parsed::<f64>(sigma_key, "positive float")?;
    if let Some(sigma) = sigma {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ConfigError::BadValue {
                key: sigma_key.to_string(),
                expected: "positive float",
                got: sigma.to_string(),
            });
        }
    }
    let kind = match kind_raw.as_deref() {
        None => default,
        Some("none") => NoiseKind::None,
        Some("gaussian") => NoiseKind::GaussianIid { sigma: 1.0 },
        Some("linear_perturbation") => NoiseKind::LinearPerturbation { sigma: 1.0 },
        Some(other) => {
            return Err(ConfigError::BadValue {
                key: kind_key.to_string(),
                expected: "none | gaussian | linear_perturbation",
                got: other.to_string(),
            })
        }
    };
    Ok(match (kind, sigma) {
        (NoiseKind::None, Some(_)) => {
            return Err(ConfigError::Constraint(format!(
                "{sigma_key} set but {kind_key} is none"
            )))
        }
        (NoiseKind::None, None) => NoiseKind::None,
        (NoiseKind::GaussianIid { sigma: d }, s) => {
            NoiseKind::GaussianIid { sigma: s.unwrap_or(d) }
        }
        (NoiseKind::LinearPerturbation { sigma: d }, s) => {
            NoiseKind::LinearPerturbation { sigma: s.unwrap_or(d) }
        }
    })
}

/// Parses and fully resolves an experiment configuration: defaults applied,
/// every value validated, unknown keys rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut bag = KeyBag::parse(text)?;

    let kind_raw = bag.take("problem.kind").ok_or_else(|| {
        ConfigError::MissingKey("problem.kind".to_string())
    })?;
    let kind = ProblemKind::parse(&kind_raw).ok_or_else(|| ConfigError::BadValue {
        key: "problem.kind".to_string(),
        expected: "linear | minimax | lagrangian | gradient_variant",
        got: kind_raw,
    })?;

    let problem = match kind {
        ProblemKind::Linear => ProblemSpec::Linear {
            d: bag.take_parsed("problem.d", "positive integer")?.unwrap_or(20),
            delta_rank: bag.take_parsed("problem.delta_rank", "positive integer")?.unwrap_or(5),
        },
        ProblemKind::Minimax => ProblemSpec::Minimax {
            d: bag.take_parsed("problem.d", "positive integer")?.unwrap_or(5),
            x_radius: bag.take_parsed("problem.x_radius", "positive float")?.unwrap_or(1000.0),
        },
        ProblemKind::Lagrangian => ProblemSpec::Lagrangian {
            d1: bag.take_parsed("problem.d1", "positive integer")?.unwrap_or(20),
            d2: bag.take_parsed("problem.d2", "positive integer")?.unwrap_or(3),
            blocks: bag.take_parsed("problem.blocks", "positive integer")?.unwrap_or(4),
            radius: bag.take_parsed("problem.radius", "positive float")?.unwrap_or(2.0),
        },
        ProblemKind::GradientVariant => ProblemSpec::GradientVariant {
            d: bag.take_parsed("problem.d", "positive integer")?.unwrap_or(10),
            mu: bag.take_parsed("problem.mu", "float in (0,1)")?.unwrap_or(0.5),
        },
    };

    let schedule = StepSchedule::new(
        bag.take_parsed("schedule.alpha", "positive float")?.unwrap_or(0.5),
        bag.take_parsed("schedule.beta", "positive float")?.unwrap_or(0.1),
        bag.take_parsed("schedule.exp_fast", "float in (0,1)")?.unwrap_or(0.55),
        bag.take_parsed("schedule.exp_slow", "float in (0,1)")?.unwrap_or(0.85),
        bag.take_parsed("schedule.offset", "float >= 1")?.unwrap_or(100.0),
    )?;

    let noise_defaults = default_noise(kind);
    let noise = NoiseModel {
        fast: parse_noise_channel(&mut bag, "noise.fast", "noise.fast_sigma", noise_defaults.fast)?,
        slow: parse_noise_channel(&mut bag, "noise.slow", "noise.slow_sigma", noise_defaults.slow)?,
    };

    let horizon = bag.take_parsed("run.horizon", "positive integer")?.unwrap_or(100_000u64);
    let stride = bag.take_parsed("run.stride", "positive integer")?.unwrap_or(100u64);
    let n_runs = bag.take_parsed("run.runs", "positive integer")?.unwrap_or(200usize);
    let master_seed = bag.take_parsed("run.seed", "unsigned 64-bit integer")?.unwrap_or(1u64);
    let workers = bag.take_parsed("run.workers", "integer (0 = all cores)")?.unwrap_or(0usize);

    let variant = match bag.take("run.variant").as_deref() {
        None => default_variant(kind),
        Some("plain") => Variant::Plain,
        Some("projected") => Variant::Projected,
        Some(other) => {
            return Err(ConfigError::BadValue {
                key: "run.variant".to_string(),
                expected: "plain | projected",
                got: other.to_string(),
            })
        }
    };

    let residual_kinds = match bag.take("run.residuals") {
        None => default_kinds(kind),
        Some(raw) => raw
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                ResidualKind::parse(tok).ok_or_else(|| ConfigError::BadValue {
                    key: "run.residuals".to_string(),
                    expected: "comma list of residual kinds",
                    got: tok.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };

    let output_dir = PathBuf::from(bag.take("run.output_dir").unwrap_or_else(|| "out".into()));
    let x0 = bag.take("run.x0").map(|raw| parse_vector(&raw, "run.x0")).transpose()?;
    let y0 = bag.take("run.y0").map(|raw| parse_vector(&raw, "run.y0")).transpose()?;

    bag.finish()?;

    if stride < 1 {
        return Err(ConfigError::Constraint("run.stride must be >= 1".into()));
    }
    if horizon < stride {
        return Err(ConfigError::Constraint(format!(
            "run.horizon ({horizon}) must be >= run.stride ({stride})"
        )));
    }
    if n_runs < 1 {
        return Err(ConfigError::Constraint("run.runs must be >= 1".into()));
    }
    if variant == Variant::Projected && kind == ProblemKind::Linear {
        return Err(ConfigError::Constraint(
            "the linear problem has no projection region; run.variant must be plain".into(),
        ));
    }
    if variant == Variant::Projected && kind == ProblemKind::GradientVariant {
        return Err(ConfigError::Constraint(
            "the gradient variant has no projection region; run.variant must be plain".into(),
        ));
    }

    Ok(ExperimentConfig {
        problem,
        schedule,
        noise,
        horizon,
        stride,
        n_runs,
        master_seed,
        workers,
        variant,
        residual_kinds,
        output_dir,
        x0,
        y0,
    })
}

fn noise_channel_text(out: &mut String, kind_key: &str, sigma_key: &str, kind: NoiseKind) {
    match kind {
        NoiseKind::None => out.push_str(&format!("{kind_key} = none\n")),
        NoiseKind::GaussianIid { sigma } => {
            out.push_str(&format!("{kind_key} = gaussian\n{sigma_key} = {sigma}\n"));
        }
        NoiseKind::LinearPerturbation { sigma } => {
            out.push_str(&format!("{kind_key} = linear_perturbation\n{sigma_key} = {sigma}\n"));
        }
    }
}

impl ExperimentConfig {
    /// The resolved configuration as parseable flat text; `parse_config`
    /// of this text reproduces `self` exactly.
    pub fn config_text(&self) -> String {
        let mut s = String::new();
        match &self.problem {
            ProblemSpec::Linear { d, delta_rank } => {
                s.push_str("problem.kind = linear\n");
                s.push_str(&format!("problem.d = {d}\n"));
                s.push_str(&format!("problem.delta_rank = {delta_rank}\n"));
            }
            ProblemSpec::Minimax { d, x_radius } => {
                s.push_str("problem.kind = minimax\n");
                s.push_str(&format!("problem.d = {d}\n"));
                s.push_str(&format!("problem.x_radius = {x_radius}\n"));
            }
            ProblemSpec::Lagrangian { d1, d2, blocks, radius } => {
                s.push_str("problem.kind = lagrangian\n");
                s.push_str(&format!("problem.d1 = {d1}\n"));
                s.push_str(&format!("problem.d2 = {d2}\n"));
                s.push_str(&format!("problem.blocks = {blocks}\n"));
                s.push_str(&format!("problem.radius = {radius}\n"));
            }
            ProblemSpec::GradientVariant { d, mu } => {
                s.push_str("problem.kind = gradient_variant\n");
                s.push_str(&format!("problem.d = {d}\n"));
                s.push_str(&format!("problem.mu = {mu}\n"));
            }
        }
        s.push_str(&format!("schedule.alpha = {}\n", self.schedule.alpha_coeff));
        s.push_str(&format!("schedule.beta = {}\n", self.schedule.beta_coeff));
        s.push_str(&format!("schedule.exp_fast = {}\n", self.schedule.exp_fast));
        s.push_str(&format!("schedule.exp_slow = {}\n", self.schedule.exp_slow));
        s.push_str(&format!("schedule.offset = {}\n", self.schedule.offset));
        noise_channel_text(&mut s, "noise.fast", "noise.fast_sigma", self.noise.fast);
        noise_channel_text(&mut s, "noise.slow", "noise.slow_sigma", self.noise.slow);
        s.push_str(&format!("run.horizon = {}\n", self.horizon));
        s.push_str(&format!("run.stride = {}\n", self.stride));
        s.push_str(&format!("run.runs = {}\n", self.n_runs));
        s.push_str(&format!("run.seed = {}\n", self.master_seed));
        s.push_str(&format!("run.workers = {}\n", self.workers));
        s.push_str(&format!(
            "run.variant = {}\n",
            match self.variant {
                Variant::Plain => "plain",
                Variant::Projected => "projected",
            }
        ));
        let kinds: Vec<&str> = self.residual_kinds.iter().map(|k| k.name()).collect();
        s.push_str(&format!("run.residuals = {}\n", kinds.join(",")));
        s.push_str(&format!("run.output_dir = {}\n", self.output_dir.display()));
        if let Some(x0) = &self.x0 {
            let vals: Vec<String> = x0.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("run.x0 = {}\n", vals.join(",")));
        }
        if let Some(y0) = &self.y0 {
            let vals: Vec<String> = y0.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("run.y0 = {}\n", vals.join(",")));
        }
        s
    }
}
