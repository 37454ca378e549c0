//! Run manifest: a structured text file recording the resolved
//! configuration, validation reports, per-run seeds, the serialized problem
//! instance, and SHA-256 digests of every artifact. Re-running the embedded
//! configuration reproduces the artifacts byte for byte.

use std::fmt::Write as _;

use crate::harness::HarnessError;
use crate::problems::Instance;
use crate::schedules::ValidationReport;

pub const MANIFEST_HEADER: &str = "# ttsa manifest v1";

pub struct ManifestData<'a> {
    pub config_text: &'a str,
    pub validation_main: &'a ValidationReport,
    pub validation_gradient: &'a ValidationReport,
    pub per_run_seeds: &'a [u64],
    pub n_excluded: usize,
    pub exclusion_notes: &'a [String],
    pub instance: &'a Instance,
    /// `(file name, sha256 hex)` for every artifact written.
    pub artifacts: &'a [(String, String)],
    /// Free-form summary entries (`name = value` lines).
    pub summary: &'a [(String, String)],
}

fn validation_section(out: &mut String, name: &str, report: &ValidationReport) {
    let _ = writeln!(out, "[validation {name}]");
    let _ = writeln!(out, "overall = {}", report.overall);
    if let Some(g1) = report.gamma1 {
        let _ = writeln!(out, "gamma1 = {g1}");
    }
    if let Some(g2) = report.gamma2 {
        let _ = writeln!(out, "gamma2 = {g2}");
    }
    if let Some(k) = report.deferred_valid_from {
        let _ = writeln!(out, "deferred_valid_from = {k}");
    }
    for c in &report.checks {
        let _ = writeln!(
            out,
            "check {} = {} (lhs {}, threshold {})",
            c.name,
            if c.satisfied { "pass" } else { "fail" },
            c.lhs,
            c.threshold
        );
    }
    let _ = writeln!(out, "[/validation {name}]");
}

pub fn render(data: &ManifestData<'_>) -> Result<String, HarnessError> {
    let mut out = String::new();
    let _ = writeln!(out, "{MANIFEST_HEADER}");
    let _ = writeln!(out, "tool = ttsa {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out);

    let _ = writeln!(out, "[config]");
    out.push_str(data.config_text);
    let _ = writeln!(out, "[/config]");
    let _ = writeln!(out);

    validation_section(&mut out, "main", data.validation_main);
    validation_section(&mut out, "gradient_variant", data.validation_gradient);
    let _ = writeln!(out);

    let _ = writeln!(out, "[runs]");
    let _ = writeln!(out, "n_runs = {}", data.per_run_seeds.len());
    let _ = writeln!(out, "n_excluded = {}", data.n_excluded);
    for (i, seed) in data.per_run_seeds.iter().enumerate() {
        let _ = writeln!(out, "run {i} seed = {seed}");
    }
    for note in data.exclusion_notes {
        let _ = writeln!(out, "excluded: {note}");
    }
    let _ = writeln!(out, "[/runs]");
    let _ = writeln!(out);

    for (name, value) in data.summary {
        let _ = writeln!(out, "summary {name} = {value}");
    }
    if !data.summary.is_empty() {
        let _ = writeln!(out);
    }

    let instance_ron = ron::ser::to_string(data.instance)
        .map_err(|e| HarnessError::Serialize(e.to_string()))?;
    let _ = writeln!(out, "[instance]");
    let _ = writeln!(out, "{instance_ron}");
    let _ = writeln!(out, "[/instance]");
    let _ = writeln!(out);

    let _ = writeln!(out, "[artifacts]");
    for (name, digest) in data.artifacts {
        let _ = writeln!(out, "{name} sha256 {digest}");
    }
    let _ = writeln!(out, "[/artifacts]");
    Ok(out)
}

fn section<'t>(text: &'t str, name: &str) -> Result<&'t str, HarnessError> {
    let open = format!("[{name}]\n");
    let close = format!("[/{name}]");
    let start = text
        .find(&open)
        .ok_or_else(|| HarnessError::ManifestFormat(format!("missing [{name}] section")))?
        + open.len();
    let end = text[start..]
        .find(&close)
        .ok_or_else(|| HarnessError::ManifestFormat(format!("unterminated [{name}] section")))?;
    Ok(&text[start..start + end])
}

/// Extracts the embedded resolved configuration from a manifest.
pub fn embedded_config(manifest_text: &str) -> Result<String, HarnessError> {
    Ok(section(manifest_text, "config")?.to_string())
}

/// Extracts and deserializes the stored problem instance.
pub fn embedded_instance(manifest_text: &str) -> Result<Instance, HarnessError> {
    let ron_text = section(manifest_text, "instance")?.trim();
    ron::de::from_str(ron_text).map_err(|e| HarnessError::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::build_gradient_variant;
    use crate::schedules::{validate_gradient_variant, validate_main, StepSchedule};

    #[test]
    fn manifest_round_trips_config_and_instance() {
        let p = build_gradient_variant(5, 3, 0.5).unwrap();
        let sched = StepSchedule::new(0.5, 0.1, 0.4, 0.6, 100.0).unwrap();
        let main = validate_main(&sched, 0.5, 1.5);
        let grad = validate_gradient_variant(&sched);
        let config_text = "problem.kind = gradient_variant\nproblem.d = 3\n";
        let artifacts = vec![("grad_j.csv".to_string(), "abc123".to_string())];
        let data = ManifestData {
            config_text,
            validation_main: &main,
            validation_gradient: &grad,
            per_run_seeds: &[11, 22, 33],
            n_excluded: 0,
            exclusion_notes: &[],
            instance: &p.instance,
            artifacts: &artifacts,
            summary: &[("final_mean grad_j".to_string(), "0.125".to_string())],
        };
        let text = render(&data).unwrap();
        assert!(text.starts_with(MANIFEST_HEADER));
        assert_eq!(embedded_config(&text).unwrap(), config_text);
        let inst = embedded_instance(&text).unwrap();
        match inst {
            Instance::GradientVariant(g) => {
                let orig = p.as_gradient_variant().unwrap();
                assert_eq!(g.mu, orig.mu);
                assert_eq!(g.x0, orig.x0);
            }
            _ => panic!("wrong instance kind"),
        }
        assert!(text.contains("run 1 seed = 22"));
        assert!(text.contains("grad_j.csv sha256 abc123"));
        assert!(text.contains("check exp_order = pass"));
    }

    #[test]
    fn missing_sections_are_reported() {
        assert!(embedded_config("no sections here").is_err());
        assert!(embedded_instance("[instance]\ngarbage").is_err());
    }
}
