use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsSummary, REPORT_PERCENTILES};
use crate::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PERCENTILE_FILE: &str = "percentiles.csv";

/// Everything written by [`write_report`]. `modes` holds one pooled summary
/// per mode and feeds the percentile table; `runs` holds per-seed summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: serde_json::Value,
    pub runs: Vec<MetricsSummary>,
    pub modes: Vec<MetricsSummary>,
}

impl Report {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub summary: PathBuf,
    pub metrics: PathBuf,
    pub percentiles: PathBuf,
}

pub fn percentile_header() -> Vec<String> {
    std::iter::once("mode".to_string())
        .chain(REPORT_PERCENTILES.iter().map(|p| p.to_string()))
        .collect()
}

fn metrics_row(m: &MetricsSummary) -> Vec<String> {
    vec![
        m.mode.clone(),
        m.seed.map(|s| s.to_string()).unwrap_or_else(|| "all".into()),
        m.runs.to_string(),
        m.ticks.to_string(),
        m.arrivals.to_string(),
        m.successes.to_string(),
        m.failures.to_string(),
        format!("{:?}", m.success_rps),
        format!("{:?}", m.failure_rate),
        format!("{:?}", m.mean_rt_ms),
        format!("{:?}", m.tps),
        format!("{:?}", m.mean_reward),
    ]
}

pub fn write_report(report: &Report, dir: impl AsRef<Path>) -> Result<ReportPaths> {
    if report.modes.is_empty() && report.runs.is_empty() {
        return Err(Error::EmptyInput("report needs at least one summary"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ReportPaths {
        summary: dir.join(SUMMARY_FILE),
        metrics: dir.join(METRICS_FILE),
        percentiles: dir.join(PERCENTILE_FILE),
    };
    std::fs::write(&paths.summary, report.to_json()?).map_err(|e| Error::io(&paths.summary, e))?;

    let mut w = csv::Writer::from_path(&paths.metrics)?;
    w.write_record([
        "mode",
        "seed",
        "runs",
        "ticks",
        "arrivals",
        "successes",
        "failures",
        "success_rps",
        "failure_rate",
        "mean_rt_ms",
        "tps",
        "mean_reward",
    ])?;
    for m in report.runs.iter().chain(&report.modes) {
        w.write_record(metrics_row(m))?;
    }
    w.flush().map_err(|e| Error::io(&paths.metrics, e))?;

    let mut w = csv::Writer::from_path(&paths.percentiles)?;
    w.write_record(percentile_header())?;
    let rows = if report.modes.is_empty() { &report.runs } else { &report.modes };
    for m in rows {
        let mut row = vec![m.mode.clone()];
        row.extend(REPORT_PERCENTILES.iter().map(|&p| format!("{:?}", m.percentile(p).unwrap_or(0.0))));
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(&paths.percentiles, e))?;
    Ok(paths)
}
