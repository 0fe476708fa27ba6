//! Report envelope and human-readable rendering.
//!
//! Every JSON report carries a schema version, the build id, its kind, and
//! (when the producing step was seeded) the seed, so any output file is
//! auditable on its own.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// git-describe of the sources this binary was built from.
pub fn build_id() -> &'static str {
    env!("OBBR_BUILD_ID")
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Serialize)]
struct Envelope<T: Serialize> {
    schema_version: u32,
    build: &'static str,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(flatten)]
    payload: T,
}

/// Serializes a report with its envelope to pretty JSON.
pub fn report_json<T: Serialize>(kind: &'static str, seed: Option<u64>, payload: &T) -> String {
    serde_json::to_string_pretty(&Envelope {
        schema_version: SCHEMA_VERSION,
        build: build_id(),
        kind,
        seed,
        payload,
    })
    .expect("report serializes")
}

pub fn write_report<T: Serialize>(
    path: &Path,
    kind: &'static str,
    seed: Option<u64>,
    payload: &T,
) -> Result<(), ReportError> {
    std::fs::write(path, report_json(kind, seed, payload)).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<Value, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn fmt_fraction(v: &Value) -> String {
    match v {
        Value::Null => "n/a".to_string(),
        Value::Number(n) => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        other => other.to_string(),
    }
}

// serde_json's Display ignores width flags, so pad plain strings instead.
fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Renders any enveloped report as a small table keyed on its `kind`.
pub fn render_table(report: &Value) -> String {
    let kind = report["kind"].as_str().unwrap_or("unknown");
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!(
        "kind: {kind}   schema: {}   build: {}",
        report["schema_version"], report["build"]
    ));
    if let Some(seed) = report.get("seed").and_then(Value::as_u64) {
        line(format!("seed: {seed}"));
    }
    match kind {
        "poison_report" => {
            line(format!(
                "samples: {}   poisoned: {}   errors: {}",
                report["total"],
                report["poisoned"],
                report["errors"].as_array().map_or(0, Vec::len)
            ));
            line(format!("{:<28} {:>8}", "trigger", "count"));
            if let Some(map) = report["per_trigger_counts"].as_object() {
                for (trigger, count) in map {
                    line(format!("{trigger:<28} {:>8}", plain(count)));
                }
            }
        }
        "leakage_report" => {
            line(format!(
                "samples: {}   mode: {}",
                report["total_samples"],
                report["mode"].as_str().unwrap_or("-")
            ));
            line(format!("{:<28} {:>8} {:>10}", "trigger", "count", "fraction"));
            if let Some(map) = report["per_trigger"].as_object() {
                for (trigger, entry) in map {
                    line(format!(
                        "{trigger:<28} {:>8} {:>10}",
                        plain(&entry["containing"]),
                        fmt_fraction(&entry["fraction"])
                    ));
                }
            }
        }
        "asr_report" => {
            line(format!(
                "prompts: {}   non-refusals: {}   asr: {}   lexicon: {}",
                report["prompts_evaluated"],
                report["non_refusals"],
                fmt_fraction(&report["asr"]),
                report["refusal_lexicon_id"].as_str().unwrap_or("-")
            ));
            if let Some(judge) = report.get("judge").filter(|v| !v.is_null()) {
                line(format!(
                    "judge: {}   scored: {}   mean score: {}",
                    judge["model"].as_str().unwrap_or("-"),
                    judge["scored"],
                    fmt_fraction(&judge["mean_score"])
                ));
            }
        }
        "rewrite_failures" => {
            if let Some(failures) = report["failures"].as_array() {
                line(format!("failed samples: {}", failures.len()));
                line(format!("{:<12} {:>8}  {}", "lineage", "attempts", "error"));
                for f in failures {
                    line(format!(
                        "{:<12} {:>8}  {}",
                        plain(&f["lineage_id"]),
                        plain(&f["attempt_count"]),
                        f["message"].as_str().unwrap_or("-")
                    ));
                }
            }
        }
        "rewrite_records" => {
            line(format!(
                "mode: {}   k: {}   model: {}   records: {}",
                report["mode"].as_str().unwrap_or("-"),
                report["k"],
                report["model"].as_str().unwrap_or("-"),
                report["records"].as_array().map_or(0, Vec::len)
            ));
            if let Some(records) = report["records"].as_array() {
                let attempts: u64 = records
                    .iter()
                    .filter_map(|r| r["attempt_count"].as_u64())
                    .sum();
                let latency: u64 = records
                    .iter()
                    .filter_map(|r| r["latency_ms"].as_u64())
                    .sum();
                if !records.is_empty() {
                    line(format!(
                        "total attempts: {attempts}   mean latency: {:.1} ms",
                        latency as f64 / records.len() as f64
                    ));
                }
            }
        }
        "simulate_report" => {
            if let Some(sweep) = report.get("sweep").filter(|v| !v.is_null()) {
                line(format!("models: {}", sweep["models"]));
                line(format!(
                    "posterior gain : {}/{} passed (min margin {})",
                    sweep["posterior_passed"],
                    sweep["models"],
                    fmt_fraction(&sweep["min_posterior_margin"])
                ));
                line(format!(
                    "ratio-1 bound  : {}/{} exactly equal",
                    sweep["boundary_exact"], sweep["models"]
                ));
                line(format!(
                    "benign gain    : {}/{} passed (min delta {}, max residual {})",
                    sweep["benign_passed"],
                    sweep["models"],
                    fmt_fraction(&sweep["min_delta"]),
                    fmt_fraction(&sweep["max_factorization_residual"])
                ));
            }
            if let Some(model) = report.get("model").filter(|v| !v.is_null()) {
                line(format!(
                    "posteriors: open {} vs closed {} (ratio {}) gain holds: {}",
                    fmt_fraction(&model["posterior"]["posteriors"]["open_book"]),
                    fmt_fraction(&model["posterior"]["posteriors"]["closed_book"]),
                    fmt_fraction(&model["posterior"]["posteriors"]["likelihood_ratio"]),
                    model["posterior"]["holds"]
                ));
                line(format!(
                    "benign gain: delta {} residual {} holds: {}",
                    fmt_fraction(&model["benign"]["delta"]),
                    fmt_fraction(&model["benign"]["residual"]),
                    model["benign"]["holds"]
                ));
            }
        }
        _ => {
            if let Some(map) = report.as_object() {
                for (key, value) in map {
                    if key == "kind" || key == "schema_version" || key == "build" {
                        continue;
                    }
                    line(format!("{key}: {value}"));
                }
            }
        }
    }
    out
}
