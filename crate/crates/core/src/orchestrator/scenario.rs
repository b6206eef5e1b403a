use std::path::Path;

use serde::{Deserialize, Serialize};

use super::notifier::NotifierConfig;
use crate::model::{ClusterSpec, ClusterState};
use crate::par::Execution;
use crate::reward::{RewardConfig, UtilizationTargets};
use crate::sim::{LoadSeries, SimConfig, SimContext};
use crate::student::ScalingSteps;
use crate::teacher::TD3Config;
use crate::workload::{
    fit_profiler_with, forecast_series, profile_cluster, train_predictor_with, util_to_requests, PredictorConfig,
    PredictorModel, ProfilerModel, UtilPoint, WorkloadTrace,
};
use crate::{Error, Result};

/// The desk-scale scenario shipped in `configs/desk.toml`.
pub const DESK_SCENARIO: &str = include_str!("../../../../configs/desk.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadConfig {
    /// Busiest trace interval maps to this arrival rate (req/s).
    pub peak_rate: f64,
    /// Simulation ticks per trace interval.
    pub ticks_per_interval: u64,
    /// Profiling sweeps request rates from 0 to this value.
    pub profile_max_rate: f64,
    pub profile_points: usize,
    pub profile_ticks: usize,
    pub profiler_epochs: usize,
    pub profiler_lr: f64,
    pub predictor: PredictorConfig,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            peak_rate: 240.0,
            ticks_per_interval: 10,
            profile_max_rate: 800.0,
            profile_points: 41,
            profile_ticks: 5,
            profiler_epochs: 300,
            profiler_lr: 0.1,
            predictor: PredictorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentConfig {
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Imitation steps per student after each teacher-controlled interval.
    pub imitation_steps: usize,
    /// Imitation steps per student when training offline from buffers.
    pub offline_steps: usize,
    /// Control intervals the teacher stays in charge after taking over.
    pub min_teacher_intervals: u64,
    /// Teacher rollouts recorded as guidance after teacher training.
    pub guidance_episodes: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 10_000,
            batch_size: 32,
            lr: 1e-3,
            imitation_steps: 4,
            offline_steps: 2_000,
            min_teacher_intervals: 20,
            guidance_episodes: 20,
        }
    }
}

fn default_control_interval() -> u64 {
    5
}

/// A complete experiment description: cluster, simulator, reward targets,
/// load shaping and every learner's hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub targets: UtilizationTargets,
    #[serde(default)]
    pub steps: ScalingSteps,
    /// Ticks between teacher decisions.
    #[serde(default = "default_control_interval")]
    pub control_interval: u64,
    #[serde(default)]
    pub load: LoadConfig,
    #[serde(default)]
    pub teacher: TD3Config,
    #[serde(default)]
    pub notifier: NotifierConfig,
    #[serde(default)]
    pub student: StudentConfig,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn desk() -> Self {
        Self::from_toml_str(DESK_SCENARIO).expect("shipped scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.teacher.validate()?;
        self.notifier.validate()?;
        if self.control_interval == 0 {
            return Err(Error::Config("control_interval must be at least 1".into()));
        }
        if !(self.steps.cpu_step > 0.0 && self.steps.memory_step > 0.0) {
            return Err(Error::Config("scaling steps must be positive".into()));
        }
        let l = &self.load;
        if !(l.peak_rate > 0.0 && l.profile_max_rate > 0.0) {
            return Err(Error::Config("load rates must be positive".into()));
        }
        if l.ticks_per_interval == 0 || l.profile_points < 2 || l.profile_ticks == 0 {
            return Err(Error::Config("load interval and profiling sweep must be non-empty".into()));
        }
        if self.student.buffer_capacity == 0 || self.student.batch_size == 0 {
            return Err(Error::Config("student buffer and batch must be positive".into()));
        }
        let state = self.initial_state()?;
        if let Some(v) = state.validate().first() {
            return Err(Error::Cluster(v.to_string()));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<ClusterState> {
        ClusterState::from_spec(&self.cluster)
    }

    pub fn context(&self) -> Result<SimContext> {
        let reward = RewardConfig::uniform(
            self.sim.rt_max,
            self.cluster.machines.len(),
            self.targets.cpu,
            self.targets.mem,
        )?;
        SimContext::new(self.sim.clone(), reward, self.steps, self.load.peak_rate)
    }

    pub fn deployment_ids(&self) -> Vec<String> {
        self.cluster.deployments.iter().map(|d| d.id.clone()).collect()
    }
}

/// Arrival rates and forecasts derived from a utilization trace.
#[derive(Debug, Clone)]
pub struct Workload {
    pub series: Vec<UtilPoint>,
    pub profiler: ProfilerModel,
    pub predictor: PredictorModel,
    pub load: LoadSeries,
}

/// Profiles the scenario's cluster, fits the profiler, trains the forecaster
/// on the trace's machine-averaged utilization and converts both the observed
/// and forecast utilization into arrival rates scaled to the peak rate.
///
/// Reserved memory does not depend on the request rate in the simulator, so
/// the memory input of the profiler is held at the profiled level.
pub fn build_workload(exec: Execution, scenario: &Scenario, trace: &WorkloadTrace, seed: u64) -> Result<Workload> {
    let series = trace.aggregate();
    let cfg = &scenario.load;
    let state = scenario.initial_state()?;
    let rates: Vec<f64> = (0..cfg.profile_points)
        .map(|i| cfg.profile_max_rate * i as f64 / (cfg.profile_points - 1) as f64)
        .collect();
    let samples = profile_cluster(&state, &rates, cfg.profile_ticks, scenario.sim.tick, seed)?;
    let mem = samples[0].mem_util;
    let profiler = fit_profiler_with(
        exec,
        &ProfilerModel::default_sizes(),
        &samples,
        cfg.profiler_epochs,
        cfg.profiler_lr,
        seed,
    )?;
    let predictor = train_predictor_with(
        exec,
        &series,
        &PredictorConfig {
            seed,
            ..cfg.predictor.clone()
        },
    )?;
    let forecasts = forecast_series(exec, &predictor, &series)?;

    let raw: Vec<f64> = series
        .iter()
        .map(|p| util_to_requests(&profiler, p[0], mem))
        .collect::<Result<_>>()?;
    let raw_forecast: Vec<f64> = forecasts
        .iter()
        .map(|p| util_to_requests(&profiler, p[0], mem))
        .collect::<Result<_>>()?;
    let peak = raw.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Config("trace maps to zero load everywhere".into()));
    }
    let scale = cfg.peak_rate / peak;
    let load = LoadSeries::new(
        cfg.ticks_per_interval,
        raw.iter().map(|r| r * scale).collect(),
        raw_forecast.iter().map(|r| r * scale).collect(),
    )?;
    Ok(Workload {
        series,
        profiler,
        predictor,
        load,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scenario_parses() {
        let s = Scenario::desk();
        assert_eq!(s.cluster.machines.len(), 4);
        assert_eq!(s.cluster.deployments.len(), 3);
        assert_eq!(s.cluster.deployments.iter().filter(|d| d.optional_in_chain).count(), 1);
        assert!(s.cluster.machines.iter().all(|m| m.cpu_capacity == 8.0 && m.mem_capacity == 8.0));
        assert!(s.context().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = DESK_SCENARIO.replace("control_interval = 5", "control_interval = 0");
        assert!(Scenario::from_toml_str(&bad).is_err());
        assert!(Scenario::from_toml_str("nonsense").is_err());
    }
}
