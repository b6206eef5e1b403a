use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Mean (cpu, mem) utilization at one timestamp.
pub type UtilPoint = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub timestamp_s: f64,
    pub machine_id: String,
    pub cpu_util: f64,
    pub mem_util: f64,
}

/// Machine utilization samples sorted by timestamp (stable for ties).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkloadTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: [&str; 4] = ["timestamp_s", "machine_id", "cpu_util", "mem_util"];

impl WorkloadTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-timestamp mean over machines, in time order.
    pub fn aggregate(&self) -> Vec<UtilPoint> {
        let mut groups: Vec<(f64, [f64; 2], usize)> = Vec::new();
        for r in &self.records {
            match groups.last_mut() {
                Some((t, sum, n)) if *t == r.timestamp_s => {
                    sum[0] += r.cpu_util;
                    sum[1] += r.mem_util;
                    *n += 1;
                }
                _ => groups.push((r.timestamp_s, [r.cpu_util, r.mem_util], 1)),
            }
        }
        groups
            .into_iter()
            .map(|(_, s, n)| [s[0] / n as f64, s[1] / n as f64])
            .collect()
    }

    /// Distinct timestamps in order.
    pub fn timestamps(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.records {
            if out.last() != Some(&r.timestamp_s) {
                out.push(r.timestamp_s);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            w.write_record([
                format!("{}", r.timestamp_s),
                r.machine_id.clone(),
                format!("{:.4}", r.cpu_util),
                format!("{:.4}", r.mem_util),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a trace CSV with header `timestamp_s,machine_id,cpu_util,mem_util`.
pub fn parse_trace(path: impl AsRef<Path>) -> Result<WorkloadTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_str(&text)
}

pub fn parse_trace_str(text: &str) -> Result<WorkloadTrace> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::TraceRow {
            line: 1,
            reason: format!("expected header `{}`", TRACE_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| Error::TraceRow { line, reason };
        if row.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", row.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = row[i].parse().map_err(|_| bad(format!("{name} `{}` is not a number", &row[i])))?;
            if !v.is_finite() {
                return Err(bad(format!("{name} is not finite")));
            }
            Ok(v)
        };
        let timestamp_s = num(0, "timestamp_s")?;
        let cpu_util = num(2, "cpu_util")?;
        let mem_util = num(3, "mem_util")?;
        for (name, v) in [("cpu_util", cpu_util), ("mem_util", mem_util)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{name} {v} outside [0, 1]")));
            }
        }
        if row[1].is_empty() {
            return Err(bad("empty machine_id".into()));
        }
        records.push(TraceRecord {
            timestamp_s,
            machine_id: row[1].to_string(),
            cpu_util,
            mem_util,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("trace has no rows"));
    }
    records.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    Ok(WorkloadTrace { records })
}

/// Parameters of the synthetic machine-utilization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTraceConfig {
    pub machines: usize,
    pub intervals: usize,
    pub interval_s: f64,
    pub seed: u64,
}

impl Default for SyntheticTraceConfig {
    fn default() -> Self {
        Self {
            machines: 4,
            intervals: 8 * 288,
            interval_s: 300.0,
            seed: 2018,
        }
    }
}

/// Daily-periodic utilization with per-machine offsets, AR(1) noise and rare
/// short bursts, in the shape of a container-host trace.
pub fn synthetic_trace(cfg: &SyntheticTraceConfig) -> WorkloadTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 0.012).expect("valid std");
    let burst = Normal::new(0.0, 1.0).expect("valid std");
    let day = 86_400.0;
    let mut state: BTreeMap<usize, (f64, f64, u32)> = BTreeMap::new();
    let mut records = Vec::with_capacity(cfg.machines * cfg.intervals);
    for i in 0..cfg.intervals {
        let t = i as f64 * cfg.interval_s;
        let phase = 2.0 * std::f64::consts::PI * t / day;
        for m in 0..cfg.machines {
            let (ar, ar_mem, burst_left) = state.entry(m).or_insert((0.0, 0.0, 0));
            *ar = 0.85 * *ar + noise.sample(&mut rng);
            *ar_mem = 0.95 * *ar_mem + 0.3 * noise.sample(&mut rng);
            // Roughly one burst per machine per day.
            let b: f64 = burst.sample(&mut rng);
            if *burst_left == 0 && b > 2.65 {
                *burst_left = 3;
            }
            let bump = if *burst_left > 0 {
                *burst_left -= 1;
                0.08
            } else {
                0.0
            };
            let offset = 0.03 * m as f64;
            let daily = 0.40 + 0.15 * (phase - 0.4 * m as f64 / cfg.machines as f64).sin()
                + 0.04 * (2.0 * phase).sin();
            let cpu = (daily + offset + *ar + bump).clamp(0.0, 1.0);
            let mem = (0.55 + 0.25 * (daily - 0.40) + 0.02 * m as f64 + *ar_mem).clamp(0.0, 1.0);
            records.push(TraceRecord {
                timestamp_s: t,
                machine_id: format!("m_{m}"),
                cpu_util: round4(cpu),
                mem_util: round4(mem),
            });
        }
    }
    WorkloadTrace { records }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_well_formed_rows() {
        let t = parse_trace_str("timestamp_s,machine_id,cpu_util,mem_util\n0,m1,0.5,0.4\n300,m1,0.6,0.4\n600,m1,0.7,0.5\n")
            .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.records[2].cpu_util, 0.7);
    }

    #[test]
    fn out_of_range_row_reports_line() {
        let err = parse_trace_str("timestamp_s,machine_id,cpu_util,mem_util\n0,m1,0.5,0.4\n300,m1,1.7,0.4\n").unwrap_err();
        match err {
            Error::TraceRow { line, reason } => {
                assert_eq!(line, 3);
                assert!(reason.contains("cpu_util"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_and_garbage_are_rejected() {
        assert!(parse_trace_str("timestamp_s,machine_id,cpu_util,mem_util\n0,m1,NaN,0.4\n").is_err());
        assert!(parse_trace_str("timestamp_s,machine_id,cpu_util,mem_util\n0,m1,abc,0.4\n").is_err());
        assert!(parse_trace_str("a,b,c,d\n0,m1,0.1,0.4\n").is_err());
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(matches!(
            parse_trace_str("timestamp_s,machine_id,cpu_util,mem_util\n"),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let t = parse_trace_str("timestamp_s,machine_id,cpu_util,mem_util\n600,m1,0.1,0.1\n0,m1,0.2,0.2\n300,m1,0.3,0.3\n")
            .unwrap();
        let ts: Vec<f64> = t.records.iter().map(|r| r.timestamp_s).collect();
        assert_eq!(ts, vec![0.0, 300.0, 600.0]);
    }

    #[test]
    fn aggregate_averages_machines() {
        let t = parse_trace_str("timestamp_s,machine_id,cpu_util,mem_util\n0,a,0.2,0.4\n0,b,0.4,0.6\n300,a,0.5,0.5\n")
            .unwrap();
        let agg = t.aggregate();
        assert_eq!(agg.len(), 2);
        assert!((agg[0][0] - 0.3).abs() < 1e-12 && (agg[0][1] - 0.5).abs() < 1e-12);
        assert_eq!(agg[1], [0.5, 0.5]);
    }

    #[test]
    fn synthetic_trace_round_trips_through_csv() {
        let cfg = SyntheticTraceConfig {
            intervals: 50,
            ..Default::default()
        };
        let t = synthetic_trace(&cfg);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = parse_trace_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(t.records.iter().all(|r| (0.0..=1.0).contains(&r.cpu_util)));
    }
}
