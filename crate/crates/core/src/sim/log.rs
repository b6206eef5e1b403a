use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::reward::RewardBreakdown;
use crate::{Error, Result};

/// `count` successful requests that all took `ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub ms: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLogRecord {
    pub tick: u64,
    pub chain_arrivals: Vec<u64>,
    pub successes: u64,
    pub failures: u64,
    pub chain_failures: Vec<u64>,
    /// Response times of successful requests only.
    pub latencies: Vec<LatencySample>,
    /// Offered load over capacity per deployment, capped.
    pub deployment_util: Vec<f64>,
    pub replicas: Vec<u32>,
    /// Requests each deployment actually processed.
    pub served: Vec<u64>,
    /// Tick mean response time including failures at the latency cap; the
    /// value fed to the QoS reward.
    pub mean_rt_for_reward: f64,
    /// Replicas requested by actions that could not be placed.
    pub shortfall: u32,
    pub reward: RewardBreakdown,
}

impl SimLogRecord {
    pub fn arrivals(&self) -> u64 {
        self.chain_arrivals.iter().sum()
    }

    /// Mean response time of successful requests, 0 when there were none.
    pub fn mean_success_rt(&self) -> f64 {
        let n: u64 = self.latencies.iter().map(|l| l.count).sum();
        if n == 0 {
            return 0.0;
        }
        self.latencies.iter().map(|l| l.ms * l.count as f64).sum::<f64>() / n as f64
    }

    pub fn percentile(&self, p: f64) -> Option<f64> {
        weighted_percentile(&self.latencies, p)
    }
}

/// Nearest-rank percentile over weighted samples: the smallest value whose
/// cumulative count reaches `ceil(p / 100 * n)` (rank at least 1).
pub fn weighted_percentile(samples: &[LatencySample], p: f64) -> Option<f64> {
    let n: u64 = samples.iter().map(|s| s.count).sum();
    if n == 0 {
        return None;
    }
    let mut sorted: Vec<LatencySample> = samples.iter().copied().filter(|s| s.count > 0).collect();
    sorted.sort_by(|a, b| a.ms.total_cmp(&b.ms));
    let rank = ((p / 100.0 * n as f64).ceil() as u64).clamp(1, n);
    let mut seen = 0;
    for s in &sorted {
        seen += s.count;
        if seen >= rank {
            return Some(s.ms);
        }
    }
    sorted.last().map(|s| s.ms)
}

/// Records of one run plus the deployment ids that label the per-deployment
/// columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub deployments: Vec<String>,
    pub records: Vec<SimLogRecord>,
}

impl SimLog {
    pub fn new(deployments: Vec<String>) -> Self {
        Self {
            deployments,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: SimLogRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "tick",
            "arrivals",
            "successes",
            "failures",
            "mean_rt_ms",
            "p99_rt_ms",
            "reward",
            "r_qos",
            "r_util",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(self.deployments.iter().map(|d| format!("util_{d}")));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.records {
            let mut row = vec![
                r.tick.to_string(),
                r.arrivals().to_string(),
                r.successes.to_string(),
                r.failures.to_string(),
                format!("{:?}", r.mean_success_rt()),
                format!("{:?}", r.percentile(99.0).unwrap_or(0.0)),
                format!("{:?}", r.reward.reward),
                format!("{:?}", r.reward.r_qos),
                format!("{:?}", r.reward.r_util),
            ];
            row.extend(r.deployment_util.iter().map(|u| format!("{u:?}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<simlog>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
