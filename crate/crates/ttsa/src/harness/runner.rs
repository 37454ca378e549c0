//! Experiment execution: builds the instance, fans seeded runs out over a
//! worker pool, aggregates residuals, and writes CSV/SVG artifacts plus the
//! manifest. Results are byte-identical for any worker count because runs
//! are seeded independently and folded in run-index order.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::engine::{self, run_seed, RunOptions, RunOutcome, Variant};
use crate::harness::config::{ExperimentConfig, ProblemSpec};
use crate::harness::output::{compare_svg, csv_bytes, overlay_csv_bytes, series_svg};
use crate::harness::{manifest, HarnessError};
use crate::metrics::{
    aggregate, calibrate_overlay, residuals, AggregateSeries, ResidualSeries,
};
use crate::problems::{
    build_gradient_variant, build_lagrangian, build_linear, build_minimax, Problem,
};
use crate::schedules::{validate_gradient_variant, validate_main, ValidationReport};

/// Calibration index for bound overlays: the recorded sample nearest 10^3
/// (transients before it are excluded from rate fits as well).
const OVERLAY_CALIBRATION_K: u64 = 1000;

pub struct ExecutionReport {
    pub output_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub aggregates: Vec<AggregateSeries>,
    pub validation_main: ValidationReport,
    pub validation_gradient: ValidationReport,
    pub per_run_seeds: Vec<u64>,
    pub n_excluded: usize,
    pub artifacts: Vec<(String, String)>,
}

impl ExecutionReport {
    pub fn aggregate(&self, kind: crate::metrics::ResidualKind) -> Option<&AggregateSeries> {
        self.aggregates.iter().find(|a| a.kind == kind)
    }
}

pub fn build_problem(config: &ExperimentConfig) -> Result<Problem, HarnessError> {
    let seed = engine::instance_seed(config.master_seed);
    let problem = match config.problem {
        ProblemSpec::Linear { d, delta_rank } => build_linear(seed, d, delta_rank)?,
        ProblemSpec::Minimax { d, x_radius } => build_minimax(seed, d, x_radius)?,
        ProblemSpec::Lagrangian { d1, d2, blocks, radius } => {
            build_lagrangian(seed, d1, d2, blocks, radius)?
        }
        ProblemSpec::GradientVariant { d, mu } => build_gradient_variant(seed, d, mu)?,
    };
    Ok(problem)
}

fn initial_state(
    config: &ExperimentConfig,
    problem: &Problem,
) -> Result<(DVector<f64>, DVector<f64>), HarnessError> {
    let (d1, d2) = problem.drift.dims;
    let x0 = match &config.x0 {
        Some(v) if v.len() == d1 => DVector::from_vec(v.clone()),
        Some(v) => return Err(HarnessError::InitDimension { expected: d1, got: v.len() }),
        None => problem.init.0.clone(),
    };
    let y0 = match &config.y0 {
        Some(v) if v.len() == d2 => DVector::from_vec(v.clone()),
        Some(v) => return Err(HarnessError::InitDimension { expected: d2, got: v.len() }),
        None => problem.init.1.clone(),
    };
    Ok((x0, y0))
}

enum RunResult {
    Series(Vec<ResidualSeries>),
    Excluded(String),
}

struct CoreOutput {
    aggregates: Vec<AggregateSeries>,
    per_run_seeds: Vec<u64>,
    n_excluded: usize,
    exclusion_notes: Vec<String>,
}

/// Runs all trajectories of one experiment under `variant` and aggregates
/// per residual kind. Diverged and failed runs are excluded from the
/// aggregates and counted.
fn execute_core(
    config: &ExperimentConfig,
    problem: &Problem,
    variant: Variant,
) -> Result<CoreOutput, HarnessError> {
    let init = initial_state(config, problem)?;
    let per_run_seeds: Vec<u64> =
        (0..config.n_runs).map(|i| run_seed(config.master_seed, i as u64)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;

    let results: Vec<Result<RunResult, HarnessError>> = pool.install(|| {
        per_run_seeds
            .par_iter()
            .enumerate()
            .map(|(idx, &seed)| -> Result<RunResult, HarnessError> {
                let opts = RunOptions::new(config.horizon, config.stride, seed, variant);
                let traj =
                    engine::run(&problem.drift, &config.schedule, &config.noise, (&init.0, &init.1), &opts)?;
                match &traj.outcome {
                    RunOutcome::Completed => {
                        let series =
                            residuals(&traj, problem, &config.residual_kinds, variant)?;
                        Ok(RunResult::Series(series))
                    }
                    RunOutcome::Diverged { at } => {
                        Ok(RunResult::Excluded(format!("run {idx} diverged at step {at}")))
                    }
                    RunOutcome::Failed { at, reason } => {
                        Ok(RunResult::Excluded(format!("run {idx} failed at step {at}: {reason}")))
                    }
                }
            })
            .collect()
    });

    let mut per_kind: Vec<Vec<ResidualSeries>> =
        config.residual_kinds.iter().map(|_| Vec::new()).collect();
    let mut exclusion_notes = Vec::new();
    for result in results {
        match result? {
            RunResult::Series(series) => {
                for (slot, s) in per_kind.iter_mut().zip(series) {
                    slot.push(s);
                }
            }
            RunResult::Excluded(note) => exclusion_notes.push(note),
        }
    }
    let n_excluded = exclusion_notes.len();
    if per_kind.iter().any(|s| s.is_empty()) {
        return Err(HarnessError::AllRunsExcluded);
    }
    let aggregates = per_kind
        .iter()
        .map(|series| aggregate(series, n_excluded))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoreOutput { aggregates, per_run_seeds, n_excluded, exclusion_notes })
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_artifact(
    dir: &Path,
    name: &str,
    content: &str,
    artifacts: &mut Vec<(String, String)>,
) -> Result<(), HarnessError> {
    fs::write(dir.join(name), content)?;
    artifacts.push((name.to_string(), sha256_hex(content.as_bytes())));
    Ok(())
}

/// The nearest recorded index to the overlay calibration point.
fn calibration_index(agg: &AggregateSeries) -> Option<u64> {
    agg.points
        .iter()
        .map(|p| p.k)
        .min_by_key(|&k| k.abs_diff(OVERLAY_CALIBRATION_K))
}

fn write_series_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    aggregates: &[AggregateSeries],
    suffix: &str,
    artifacts: &mut Vec<(String, String)>,
) -> Result<(), HarnessError> {
    for agg in aggregates {
        let base = format!("{}{suffix}", agg.kind.name());
        // The calibrated envelope is optional: kinds without a power-law
        // exponent, or with a non-positive calibration mean, have none.
        let overlay = calibration_index(agg)
            .and_then(|k_cal| calibrate_overlay(agg, &config.schedule, k_cal).ok());
        write_artifact(dir, &format!("{base}.csv"), &csv_bytes(agg), artifacts)?;
        if let Some(ov) = &overlay {
            write_artifact(
                dir,
                &format!("{base}_overlay.csv"),
                &overlay_csv_bytes(agg, ov),
                artifacts,
            )?;
        }
        let title = format!("{} mean-square residual", agg.kind.name());
        write_artifact(
            dir,
            &format!("{base}.svg"),
            &series_svg(agg, overlay.as_ref(), &title),
            artifacts,
        )?;
    }
    Ok(())
}

fn validation_reports(
    config: &ExperimentConfig,
    problem: &Problem,
) -> (ValidationReport, ValidationReport) {
    let c = &problem.drift.constants;
    (
        validate_main(&config.schedule, c.mu, c.lipschitz),
        validate_gradient_variant(&config.schedule),
    )
}

/// Runs an experiment end to end and writes all artifacts. Validators are
/// recorded in the manifest but never abort the run; deliberately
/// inadmissible schedules are part of the protocol.
pub fn execute(config: &ExperimentConfig) -> Result<ExecutionReport, HarnessError> {
    let problem = build_problem(config)?;
    let (validation_main, validation_gradient) = validation_reports(config, &problem);

    let core = execute_core(config, &problem, config.variant)?;

    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut artifacts = Vec::new();
    write_series_artifacts(dir, config, &core.aggregates, "", &mut artifacts)?;

    let mut summary = Vec::new();
    for agg in &core.aggregates {
        if let Some(final_mean) = agg.final_mean() {
            summary.push((format!("final_mean {}", agg.kind.name()), final_mean.to_string()));
        }
    }

    let config_text = config.config_text();
    let manifest_text = manifest::render(&manifest::ManifestData {
        config_text: &config_text,
        validation_main: &validation_main,
        validation_gradient: &validation_gradient,
        per_run_seeds: &core.per_run_seeds,
        n_excluded: core.n_excluded,
        exclusion_notes: &core.exclusion_notes,
        instance: &problem.instance,
        artifacts: &artifacts,
        summary: &summary,
    })?;
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, &manifest_text)?;

    Ok(ExecutionReport {
        output_dir: dir.clone(),
        manifest_path,
        aggregates: core.aggregates,
        validation_main,
        validation_gradient,
        per_run_seeds: core.per_run_seeds,
        n_excluded: core.n_excluded,
        artifacts,
    })
}

pub struct CompareReport {
    pub output_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub projected: Vec<AggregateSeries>,
    pub plain: Vec<AggregateSeries>,
    pub projected_final_feasibility: f64,
    pub plain_final_feasibility: f64,
    /// Whether the no-projection variant finished at or below the projected
    /// variant's final mean feasibility residual.
    pub plain_le_projected: bool,
    pub artifacts: Vec<(String, String)>,
}

/// Runs the projected and plain variants on identical seeds and emits
/// overlaid feasibility curves. Only defined for the Lagrangian problem,
/// where dropping the fast-channel projection switches the slow map from
/// non-expansive to contractive.
pub fn compare_projection(config: &ExperimentConfig) -> Result<CompareReport, HarnessError> {
    use crate::metrics::ResidualKind;

    if !matches!(config.problem, ProblemSpec::Lagrangian { .. }) {
        return Err(HarnessError::CompareRequiresLagrangian);
    }
    let mut config = config.clone();
    if !config.residual_kinds.contains(&ResidualKind::Feasibility) {
        config.residual_kinds.push(ResidualKind::Feasibility);
    }

    let problem = build_problem(&config)?;
    let (validation_main, validation_gradient) = validation_reports(&config, &problem);

    let projected = execute_core(&config, &problem, Variant::Projected)?;
    let plain = execute_core(&config, &problem, Variant::Plain)?;

    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut artifacts = Vec::new();
    write_series_artifacts(dir, &config, &projected.aggregates, "_projected", &mut artifacts)?;
    write_series_artifacts(dir, &config, &plain.aggregates, "_plain", &mut artifacts)?;

    let feas = |aggs: &[AggregateSeries]| {
        aggs.iter().find(|a| a.kind == ResidualKind::Feasibility).cloned()
    };
    let feas_projected = feas(&projected.aggregates).ok_or(HarnessError::AllRunsExcluded)?;
    let feas_plain = feas(&plain.aggregates).ok_or(HarnessError::AllRunsExcluded)?;
    write_artifact(
        dir,
        "feasibility_compare.svg",
        &compare_svg(&feas_projected, &feas_plain, "constraint residual: projected vs plain"),
        &mut artifacts,
    )?;

    let projected_final = feas_projected.final_mean().unwrap_or(f64::NAN);
    let plain_final = feas_plain.final_mean().unwrap_or(f64::NAN);
    let plain_le_projected = plain_final <= projected_final;

    let summary = vec![
        ("final_mean feasibility projected".to_string(), projected_final.to_string()),
        ("final_mean feasibility plain".to_string(), plain_final.to_string()),
        ("plain_le_projected".to_string(), plain_le_projected.to_string()),
    ];
    let config_text = config.config_text();
    let manifest_text = manifest::render(&manifest::ManifestData {
        config_text: &config_text,
        validation_main: &validation_main,
        validation_gradient: &validation_gradient,
        per_run_seeds: &projected.per_run_seeds,
        n_excluded: projected.n_excluded + plain.n_excluded,
        exclusion_notes: &[projected.exclusion_notes, plain.exclusion_notes].concat(),
        instance: &problem.instance,
        artifacts: &artifacts,
        summary: &summary,
    })?;
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, &manifest_text)?;

    Ok(CompareReport {
        output_dir: dir.clone(),
        manifest_path,
        projected: projected.aggregates,
        plain: plain.aggregates,
        projected_final_feasibility: projected_final,
        plain_final_feasibility: plain_final,
        plain_le_projected,
        artifacts,
    })
}
