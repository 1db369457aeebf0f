//! Artifact writers. Every file is a pure function of the config bytes
//! and the command line: no timestamps, no absolute paths, stable field
//! order, so identical runs produce byte-identical output.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use glauber::{Configuration, EventLog, TestReport};

#[derive(Serialize)]
pub struct ReportDocument<'a> {
    pub command: String,
    pub config_sha256: &'a str,
    pub master_seed: u64,
    pub summary: Summary,
    pub tests: &'a [TestReport],
}

#[derive(Serialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub verdict: &'static str,
}

pub fn summarize(reports: &[TestReport]) -> Summary {
    let passed = reports.iter().filter(|r| r.passed()).count();
    let failed = reports.len() - passed;
    Summary {
        total: reports.len(),
        passed,
        failed,
        verdict: if failed == 0 { "pass" } else { "fail" },
    }
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).context("serializing report")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// 17 significant digits: enough to round-trip any f64.
fn push_float(line: &mut String, x: f64) {
    write!(line, ",{x:.16e}").unwrap();
}

/// Point samples: one row per particle, `replica,particle_id,x_0,...`.
pub fn write_points_csv(
    path: &Path,
    dim: usize,
    samples: &[Configuration],
) -> Result<()> {
    let mut text = String::from("replica,particle_id");
    for a in 0..dim {
        write!(text, ",x_{a}").unwrap();
    }
    text.push('\n');
    for (replica, gamma) in samples.iter().enumerate() {
        for (id, p) in gamma.points() {
            write!(text, "{replica},{id}").unwrap();
            for c in p.coords() {
                push_float(&mut text, *c);
            }
            text.push('\n');
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Event log: one row per jump, `time,kind,particle_id,x_0,...`.
pub fn write_events_csv(path: &Path, log: &EventLog) -> Result<()> {
    let dim = log
        .initial()
        .points()
        .first()
        .map(|(_, p)| p.dim())
        .or_else(|| log.events().first().map(|e| e.location.dim()))
        .unwrap_or(0);
    let mut text = String::from("time,kind,particle_id");
    for a in 0..dim {
        write!(text, ",x_{a}").unwrap();
    }
    text.push('\n');
    for e in log.events() {
        write!(text, "{:.16e},{},{}", e.time, e.kind.as_str(), e.particle_id).unwrap();
        for c in e.location.coords() {
            push_float(&mut text, *c);
        }
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
pub struct PathSummary {
    pub horizon: f64,
    pub initial_count: usize,
    pub final_count: usize,
    pub births: usize,
    pub deaths: usize,
    pub births_per_unit_time: f64,
    pub deaths_per_unit_time: f64,
}
