use serde::{Deserialize, Serialize};

use crate::sim::{weighted_percentile, LatencySample, SimLog};
use crate::{Error, Result};

/// Percentile columns of the response-time table.
pub const REPORT_PERCENTILES: [f64; 8] = [50.0, 66.0, 75.0, 80.0, 90.0, 95.0, 99.0, 99.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileValue {
    pub p: f64,
    pub ms: f64,
}

/// Aggregate metrics of one run, or of several runs of the same mode pooled
/// together (`seed` is then `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mode: String,
    pub seed: Option<u64>,
    pub runs: usize,
    pub ticks: u64,
    pub duration_s: f64,
    pub arrivals: u64,
    pub successes: u64,
    pub failures: u64,
    pub success_rps: f64,
    pub failure_rate: f64,
    /// Mean response time of successful requests.
    pub mean_rt_ms: f64,
    /// Requests per second, successful or not.
    pub tps: f64,
    pub mean_reward: f64,
    /// Nearest-rank response-time percentiles of successful requests; 0 when
    /// nothing succeeded.
    pub percentiles: Vec<PercentileValue>,
}

impl MetricsSummary {
    pub fn percentile(&self, p: f64) -> Option<f64> {
        self.percentiles.iter().find(|v| v.p == p).map(|v| v.ms)
    }
}

pub fn compute_metrics(mode: &str, seed: Option<u64>, logs: &[&SimLog], tick_s: f64) -> Result<MetricsSummary> {
    let ticks: u64 = logs.iter().map(|l| l.len() as u64).sum();
    if ticks == 0 {
        return Err(Error::EmptyInput("cannot compute metrics of an empty log"));
    }
    let records = || logs.iter().flat_map(|l| &l.records);
    let arrivals: u64 = records().map(|r| r.arrivals()).sum();
    let successes: u64 = records().map(|r| r.successes).sum();
    let failures: u64 = records().map(|r| r.failures).sum();
    let reward_sum: f64 = records().map(|r| r.reward.reward).sum();
    let samples: Vec<LatencySample> = records().flat_map(|r| r.latencies.iter().copied()).collect();
    let served: u64 = samples.iter().map(|s| s.count).sum();
    let mean_rt_ms = if served == 0 {
        0.0
    } else {
        samples.iter().map(|s| s.ms * s.count as f64).sum::<f64>() / served as f64
    };
    let duration_s = ticks as f64 * tick_s;
    let percentiles = REPORT_PERCENTILES
        .iter()
        .map(|&p| PercentileValue {
            p,
            ms: weighted_percentile(&samples, p).unwrap_or(0.0),
        })
        .collect();
    Ok(MetricsSummary {
        mode: mode.to_string(),
        seed,
        runs: logs.len(),
        ticks,
        duration_s,
        arrivals,
        successes,
        failures,
        success_rps: successes as f64 / duration_s,
        failure_rate: if arrivals == 0 { 0.0 } else { failures as f64 / arrivals as f64 },
        mean_rt_ms,
        tps: (successes + failures) as f64 / duration_s,
        mean_reward: reward_sum / ticks as f64,
        percentiles,
    })
}
