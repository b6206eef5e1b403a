//! The `drpc` command line: argument definitions and command implementations.
//! The binary only adds logging setup and exit codes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use crate::orchestrator::{
    build_report, build_workload, compute_metrics, evaluate, run_system, train_students, train_teacher, write_report,
    Controllers, Mode, Report, RunOptions, Scenario, Workload,
};
use crate::par::Execution;
use crate::student::{DeploymentBuffer, Student};
use crate::teacher::TD3Agent;
use crate::workload::{
    evaluate_mse_with, forecast_series, parse_trace, parse_trace_str, train_predictor_with, PredictorConfig,
    TraceRecord, WorkloadTrace,
};

const SHIPPED_TRACE: &str = include_str!("../../../data/alibaba_sample.csv");
const TEACHER_FILE: &str = "teacher.ckpt";
const CURVE_FILE: &str = "training_curve.csv";

#[derive(Parser, Debug)]
#[command(name = "drpc", version, about = "Microservice autoscaling simulator with a distributed RL controller")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario TOML; the shipped desk scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Utilization trace CSV; the shipped sample trace when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run every data-parallel loop on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one controller over the trace-driven load and write its log.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "threshold-baseline")]
        mode: Mode,
        #[arg(long, default_value_t = 2000)]
        ticks: u64,
        /// Directory with teacher.ckpt and student checkpoints; untrained
        /// controllers when omitted.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Train the central agent and dump per-deployment guidance buffers.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        /// Defaults to the scenario's teacher episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train one student per deployment from guidance buffer dumps.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        /// Directory holding buffer_<deployment>.csv files; defaults to --out.
        #[arg(long)]
        buffers: Option<PathBuf>,
    },
    /// Compare modes over several seeds and write the report files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Restrict to one mode; all three when omitted.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 2000)]
        ticks: u64,
        /// Evaluation seeds are seed, seed+1, ..., seed+runs-1.
        #[arg(long, default_value_t = 5)]
        runs: u64,
        /// Trained models directory; when omitted a teacher is trained for
        /// --episodes episodes and students are fitted in-process.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the utilization forecaster and report its error per horizon.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        horizons: usize,
        /// Overrides the scenario's predictor epochs.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Merge summary.json files into one report.
    Report {
        #[command(flatten)]
        common: Common,
        /// summary.json files or directories containing one.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Executes one parsed command.
pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            common,
            mode,
            ticks,
            models,
        } => simulate(&common, mode, ticks, models.as_deref()),
        Command::TrainTeacher { common, episodes } => teacher(&common, episodes),
        Command::TrainStudent { common, buffers } => students(&common, buffers.as_deref()),
        Command::Evaluate {
            common,
            mode,
            ticks,
            runs,
            models,
            episodes,
        } => compare(&common, mode, ticks, runs, models.as_deref(), episodes),
        Command::Predict {
            common,
            horizons,
            episodes,
        } => predict(&common, horizons, episodes),
        Command::Report { common, inputs } => merge_reports(&common, &inputs),
    }
}

impl Common {
    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    fn scenario(&self) -> Result<Scenario> {
        match &self.config {
            Some(p) => Scenario::load(p).with_context(|| format!("loading scenario {}", p.display())),
            None => Ok(Scenario::desk()),
        }
    }

    fn trace(&self) -> Result<WorkloadTrace> {
        match &self.trace {
            Some(p) => parse_trace(p).with_context(|| format!("reading trace {}", p.display())),
            None => Ok(parse_trace_str(SHIPPED_TRACE)?),
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn echo(&self, scenario: &Scenario) -> serde_json::Value {
        json!({
            "scenario": scenario,
            "trace": self.trace.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "shipped".into()),
            "seed": self.seed,
        })
    }

    fn workload(&self, scenario: &Scenario) -> Result<Workload> {
        let trace = self.trace()?;
        info!("building load from {} trace rows", trace.len());
        let w = build_workload(self.exec(), scenario, &trace, self.seed)?;
        info!("load series: {} intervals, peak {:.1} req/s", w.load.rates.len(), w.load.peak());
        Ok(w)
    }
}

fn buffer_file(id: &str) -> String {
    format!("buffer_{id}.csv")
}

fn student_file(id: &str) -> String {
    format!("student_{id}.ckpt")
}

fn load_models(scenario: &Scenario, dir: &Path, exec: Execution) -> Result<Controllers> {
    let path = dir.join(TEACHER_FILE);
    let agent = TD3Agent::load(&path, scenario.teacher.clone())
        .with_context(|| format!("loading {}", path.display()))?
        .with_execution(exec);
    let students = scenario
        .deployment_ids()
        .iter()
        .map(|id| {
            let p = dir.join(student_file(id));
            Student::load(&p).with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Controllers::trained(scenario, agent, students)?)
}

fn simulate(common: &Common, mode: Mode, ticks: u64, models: Option<&Path>) -> Result<()> {
    let scenario = common.scenario()?;
    let out = common.out_dir()?;
    let w = common.workload(&scenario)?;
    let mut controllers = match models {
        Some(dir) => load_models(&scenario, dir, common.exec())?,
        None => Controllers::fresh(&scenario, common.seed)?,
    };
    let opts = RunOptions {
        exec: common.exec(),
        ..RunOptions::new(mode, ticks, common.seed)
    };
    let outcome = run_system(&scenario, &w.load, &mut controllers, &opts)?;
    outcome.log.save_csv(out.join("simlog.csv"))?;
    let m = compute_metrics(mode.name(), Some(common.seed), &[&outcome.log], scenario.sim.tick)?;
    let mut echo = common.echo(&scenario);
    echo["mode"] = json!(mode);
    echo["ticks"] = json!(ticks);
    let report = Report {
        config: echo,
        runs: vec![m.clone()],
        modes: vec![m.clone()],
    };
    write_report(&report, out)?;
    println!(
        "{mode}: failure rate {:.5}, mean response time {:.1} ms, {} retraining triggers",
        m.failure_rate, m.mean_rt_ms, outcome.retrain_triggers
    );
    Ok(())
}

fn teacher(common: &Common, episodes: Option<usize>) -> Result<()> {
    let scenario = common.scenario()?;
    let out = common.out_dir()?;
    let w = common.workload(&scenario)?;
    let episodes = episodes.unwrap_or(scenario.teacher.episodes);
    info!("training teacher for {episodes} episodes");
    let t = train_teacher(common.exec(), &scenario, &w.load, common.seed, episodes)?;
    t.agent.save(out.join(TEACHER_FILE))?;
    t.curve.save_csv(out.join(CURVE_FILE))?;
    w.profiler.save(out.join("profiler.ckpt"))?;
    w.predictor.save(out.join("predictor.ckpt"))?;
    for (id, b) in scenario.deployment_ids().iter().zip(&t.buffers) {
        b.save_csv(out.join(buffer_file(id)))?;
    }
    if let Some(last) = t.curve.episodes.last() {
        println!(
            "episode {}: mean reward {:.4}, mean response time {:.1} ms, failure rate {:.5}",
            last.episode, last.mean_reward, last.mean_rt_ms, last.failure_rate
        );
    }
    Ok(())
}

fn students(common: &Common, buffers: Option<&Path>) -> Result<()> {
    let scenario = common.scenario()?;
    let out = common.out_dir()?;
    let dir = buffers.unwrap_or(out);
    let ids = scenario.deployment_ids();
    let bufs = ids
        .iter()
        .map(|id| {
            let p = dir.join(buffer_file(id));
            DeploymentBuffer::load_csv(&p, scenario.student.buffer_capacity)
                .with_context(|| format!("reading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some((id, _)) = ids.iter().zip(&bufs).find(|(_, b)| b.is_empty()) {
        bail!("guidance buffer for `{id}` is empty");
    }
    let fits = train_students(common.exec(), &bufs, &scenario.student, common.seed)?;
    let mut w = csv::Writer::from_path(out.join("student_fit.csv"))?;
    w.write_record(["deployment", "pairs", "initial_loss", "final_loss"])?;
    for ((id, fit), b) in ids.iter().zip(&fits).zip(&bufs) {
        fit.student.save(out.join(student_file(id)))?;
        w.write_record([
            id.clone(),
            b.len().to_string(),
            format!("{:?}", fit.initial_loss),
            format!("{:?}", fit.final_loss),
        ])?;
        println!("{id}: imitation loss {:.5} -> {:.5}", fit.initial_loss, fit.final_loss);
    }
    w.flush()?;
    Ok(())
}

fn compare(
    common: &Common,
    mode: Option<Mode>,
    ticks: u64,
    runs: u64,
    models: Option<&Path>,
    episodes: Option<usize>,
) -> Result<()> {
    if runs == 0 {
        bail!("--runs must be at least 1");
    }
    let scenario = common.scenario()?;
    let out = common.out_dir()?;
    let exec = common.exec();
    let w = common.workload(&scenario)?;
    let modes: Vec<Mode> = mode.map(|m| vec![m]).unwrap_or_else(|| Mode::ALL.to_vec());
    let needs_models = modes.iter().any(|&m| m != Mode::ThresholdBaseline);
    let controllers = match models {
        Some(dir) => load_models(&scenario, dir, exec)?,
        None if needs_models => {
            let episodes = episodes.unwrap_or(scenario.teacher.episodes);
            info!("no --models given: training teacher for {episodes} episodes");
            let t = train_teacher(exec, &scenario, &w.load, common.seed, episodes)?;
            t.curve.save_csv(out.join(CURVE_FILE))?;
            let fits = train_students(exec, &t.buffers, &scenario.student, common.seed)?;
            Controllers::trained(&scenario, t.agent, fits.into_iter().map(|f| f.student).collect())?
        }
        None => Controllers::fresh(&scenario, common.seed)?,
    };
    let seeds: Vec<u64> = (0..runs).map(|i| common.seed.wrapping_add(i)).collect();
    let results = evaluate(exec, &scenario, &w.load, &controllers, &modes, &seeds, ticks)?;
    for r in &results {
        r.outcome
            .log
            .save_csv(out.join(format!("simlog_{}_{}.csv", r.mode, r.seed)))?;
    }
    let mut echo = common.echo(&scenario);
    echo["modes"] = json!(modes);
    echo["seeds"] = json!(seeds);
    echo["ticks"] = json!(ticks);
    let report = build_report(echo, &results, scenario.sim.tick)?;
    write_report(&report, out)?;
    for m in &report.modes {
        println!(
            "{}: failure rate {:.5}, mean response time {:.1} ms, p99 {:.1} ms",
            m.mode,
            m.failure_rate,
            m.mean_rt_ms,
            m.percentile(99.0).unwrap_or(0.0)
        );
    }
    Ok(())
}

fn predict(common: &Common, horizons: usize, epochs: Option<usize>) -> Result<()> {
    let scenario = common.scenario()?;
    let out = common.out_dir()?;
    let exec = common.exec();
    let trace = common.trace()?;
    let series = trace.aggregate();
    let cfg = PredictorConfig {
        seed: common.seed,
        epochs: epochs.unwrap_or(scenario.load.predictor.epochs),
        ..scenario.load.predictor.clone()
    };
    let model = train_predictor_with(exec, &series, &cfg)?;
    model.save(out.join("predictor.ckpt"))?;

    let split = crate::workload::split_point(series.len());
    let heldout = &series[split.saturating_sub(model.window)..];
    let mse = evaluate_mse_with(exec, &model, heldout, horizons)?;
    let mut w = csv::Writer::from_path(out.join("mse.csv"))?;
    w.write_record(["horizon", "mse"])?;
    for (h, v) in mse.iter().enumerate() {
        w.write_record([(h + 1).to_string(), format!("{v:?}")])?;
        println!("horizon {}: mse {v:.6}", h + 1);
    }
    w.flush()?;

    let forecasts = forecast_series(exec, &model, &series)?;
    let forecast_trace = WorkloadTrace {
        records: trace
            .timestamps()
            .into_iter()
            .zip(forecasts)
            .map(|(t, p)| TraceRecord {
                timestamp_s: t,
                machine_id: "forecast".into(),
                cpu_util: p[0],
                mem_util: p[1],
            })
            .collect(),
    };
    forecast_trace.save_csv(out.join("forecast.csv"))?;
    Ok(())
}

fn merge_reports(common: &Common, inputs: &[PathBuf]) -> Result<()> {
    let out = common.out_dir()?;
    let mut merged = Report {
        config: json!([]),
        runs: Vec::new(),
        modes: Vec::new(),
    };
    let mut configs = Vec::new();
    for input in inputs {
        let path = if input.is_dir() {
            input.join(crate::orchestrator::SUMMARY_FILE)
        } else {
            input.clone()
        };
        let r = Report::load(&path).with_context(|| format!("reading {}", path.display()))?;
        configs.push(r.config);
        merged.runs.extend(r.runs);
        merged.modes.extend(r.modes);
    }
    merged.config = json!(configs);
    let paths = write_report(&merged, out)?;
    println!(
        "merged {} summaries into {}, {} and {}",
        inputs.len(),
        paths.summary.display(),
        paths.metrics.display(),
        paths.percentiles.display()
    );
    Ok(())
}
