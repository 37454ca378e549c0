//! Command-line entry point.
//!
//! ```text
//! ttsa run <config>                execute an experiment, write artifacts
//! ttsa validate <config>           print schedule validation reports
//! ttsa compare-projection <config> run projected vs plain on shared seeds
//! ttsa version                     print the tool version
//! ```
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::process::ExitCode;

use ttsa::harness::{self, runner, HarnessError};
use ttsa::schedules::ValidationReport;

const USAGE: &str = "\
usage:
  ttsa run <config>                 execute an experiment, write CSV/SVG and a manifest
  ttsa validate <config>            print the step-size validation reports
  ttsa compare-projection <config>  run projected and plain variants on shared seeds
  ttsa version                      print the tool version

The config is a flat key-value file; see README.md for the key reference.
";

fn load_config(path: &str) -> Result<harness::ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        HarnessError::Config(harness::ConfigError::Constraint(format!(
            "cannot read config {path}: {e}"
        )))
    })?;
    Ok(harness::parse_config(&text)?)
}

fn print_report(name: &str, report: &ValidationReport) {
    println!("{name}: {}", if report.overall { "all checks pass" } else { "violations found" });
    if let (Some(g1), Some(g2)) = (report.gamma1, report.gamma2) {
        println!("  gamma1 = {g1}");
        println!("  gamma2 = {g2}");
    }
    if let Some(k) = report.deferred_valid_from {
        println!("  bounds deferred: hold from k >= {k}");
    }
    for c in &report.checks {
        println!(
            "  [{}] {} (lhs {}, threshold {})",
            if c.satisfied { "pass" } else { "FAIL" },
            c.name,
            c.lhs,
            c.threshold
        );
    }
}

fn cmd_run(path: &str) -> Result<(), HarnessError> {
    let config = load_config(path)?;
    let report = runner::execute(&config)?;
    println!(
        "ran {} runs ({} excluded), wrote {} artifacts to {}",
        report.per_run_seeds.len(),
        report.n_excluded,
        report.artifacts.len(),
        report.output_dir.display()
    );
    for agg in &report.aggregates {
        if let Some(m) = agg.final_mean() {
            println!("  final mean {} = {m}", agg.kind.name());
        }
    }
    println!("manifest: {}", report.manifest_path.display());
    Ok(())
}

fn cmd_validate(path: &str) -> Result<(), HarnessError> {
    let config = load_config(path)?;
    let problem = runner::build_problem(&config)?;
    let c = &problem.drift.constants;
    println!(
        "problem {} with declared constants mu = {}, L = {}, rho = {}",
        problem.kind.name(),
        c.mu,
        c.lipschitz,
        c.rho
    );
    let main = ttsa::schedules::validate_main(&config.schedule, c.mu, c.lipschitz);
    let grad = ttsa::schedules::validate_gradient_variant(&config.schedule);
    print_report("main iteration assumptions", &main);
    print_report("gradient-variant assumptions", &grad);
    Ok(())
}

fn cmd_compare(path: &str) -> Result<(), HarnessError> {
    let config = load_config(path)?;
    let report = runner::compare_projection(&config)?;
    println!(
        "final mean feasibility: projected = {}, plain = {}",
        report.projected_final_feasibility, report.plain_final_feasibility
    );
    println!(
        "no-projection final residual {} the projected variant's",
        if report.plain_le_projected { "<=" } else { "> (unexpected)" }
    );
    println!("artifacts in {}", report.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = match args.as_slice() {
        [cmd, path] if cmd == "run" => cmd_run(path),
        [cmd, path] if cmd == "validate" => cmd_validate(path),
        [cmd, path] if cmd == "compare-projection" => cmd_compare(path),
        [cmd] if cmd == "version" => {
            println!("ttsa {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        _ => {
            eprint!("{USAGE}");
            return ExitCode::from(1);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
