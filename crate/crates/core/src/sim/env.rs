use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{observe, step, SimContext, SimLogRecord};
use crate::model::{ClusterState, DeploymentAction};
use crate::{Error, Result};

/// What an agent sees after acting.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Mean response time over the step's requests, ms (0 if not applicable).
    pub mean_rt_ms: f64,
    pub arrivals: u64,
    pub failures: u64,
}

/// Episodic continuous-control environment.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Starts episode `episode` and returns the initial state.
    fn reset(&mut self, episode: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}

/// Arrival rates per control interval with matching one-step forecasts.
/// Indices past the end wrap around.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    pub interval_ticks: u64,
    pub rates: Vec<f64>,
    pub forecasts: Vec<f64>,
}

impl LoadSeries {
    pub fn new(interval_ticks: u64, rates: Vec<f64>, forecasts: Vec<f64>) -> Result<Self> {
        if interval_ticks == 0 {
            return Err(Error::Config("load interval must be at least one tick".into()));
        }
        if rates.is_empty() {
            return Err(Error::EmptyInput("load series has no intervals"));
        }
        if forecasts.len() != rates.len() {
            return Err(Error::dim("load forecasts", rates.len(), forecasts.len()));
        }
        if rates.iter().chain(&forecasts).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("load rates must be finite and non-negative".into()));
        }
        Ok(Self {
            interval_ticks,
            rates,
            forecasts,
        })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(1, vec![rate], vec![rate])
    }

    pub fn len_ticks(&self) -> u64 {
        self.interval_ticks * self.rates.len() as u64
    }

    fn index(&self, tick: u64) -> usize {
        ((tick / self.interval_ticks) % self.rates.len() as u64) as usize
    }

    pub fn rate_at(&self, tick: u64) -> f64 {
        self.rates[self.index(tick)]
    }

    pub fn forecast_at(&self, tick: u64) -> f64 {
        self.forecasts[self.index(tick)]
    }

    pub fn peak(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }
}

/// The simulator as a TD3 environment. One agent step covers
/// `control_interval` ticks: the action is applied on the first tick and the
/// reward is the mean tick reward over the interval.
#[derive(Debug, Clone)]
pub struct ClusterEnv {
    initial: ClusterState,
    state: ClusterState,
    ctx: SimContext,
    load: LoadSeries,
    control_interval: u64,
    seed: u64,
    rng: ChaCha8Rng,
    tick: u64,
    offset: u64,
    state_vec: Vec<f64>,
    records: Vec<SimLogRecord>,
    keep_records: bool,
}

impl ClusterEnv {
    pub fn new(initial: ClusterState, ctx: SimContext, load: LoadSeries, control_interval: u64, seed: u64) -> Result<Self> {
        if control_interval == 0 {
            return Err(Error::Config("control interval must be at least one tick".into()));
        }
        let violations = initial.validate();
        if let Some(v) = violations.first() {
            return Err(Error::Cluster(v.to_string()));
        }
        let mut env = Self {
            state: initial.clone(),
            initial,
            ctx,
            load,
            control_interval,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick: 0,
            offset: 0,
            state_vec: Vec::new(),
            records: Vec::new(),
            keep_records: false,
        };
        env.state_vec = env.observe_now();
        Ok(env)
    }

    /// Keep per-tick records of the current episode (cleared on reset).
    pub fn with_records(mut self, keep: bool) -> Self {
        self.keep_records = keep;
        self
    }

    pub fn cluster(&self) -> &ClusterState {
        &self.state
    }

    pub fn context(&self) -> &SimContext {
        &self.ctx
    }

    pub fn records(&self) -> &[SimLogRecord] {
        &self.records
    }

    pub fn deployments(&self) -> usize {
        self.state.deployments.len()
    }

    fn observe_now(&self) -> Vec<f64> {
        let t = self.offset + self.tick;
        let rate = self.load.rate_at(t);
        let shares = super::traffic_shares(&self.state);
        let offered: Vec<f64> = shares.iter().map(|s| s * rate).collect();
        observe(&self.state, &offered, self.load.forecast_at(t), &self.ctx).flatten()
    }

    /// Splits a flat action vector into per-deployment actions keyed by id.
    pub fn unpack_actions(state: &ClusterState, action: &[f64]) -> Result<BTreeMap<String, DeploymentAction>> {
        let expected = state.deployments.len() * DeploymentAction::DIM;
        if action.len() != expected {
            return Err(Error::dim("packed action", expected, action.len()));
        }
        state
            .deployments
            .iter()
            .zip(action.chunks(DeploymentAction::DIM))
            .map(|(d, a)| Ok((d.id.clone(), DeploymentAction::from_slice(a)?)))
            .collect()
    }
}

impl Environment for ClusterEnv {
    fn state_dim(&self) -> usize {
        self.deployments() * crate::model::ObservationVector::BLOCK
    }

    fn action_dim(&self) -> usize {
        self.deployments() * DeploymentAction::DIM
    }

    fn reset(&mut self, episode: u64) -> Result<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.rng.set_stream(episode);
        self.state = self.initial.clone();
        self.tick = 0;
        self.offset = self.rng.random_range(0..self.load.len_ticks());
        self.records.clear();
        self.state_vec = self.observe_now();
        Ok(self.state_vec.clone())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let mut actions = Self::unpack_actions(&self.state, action)?;
        let mut reward_sum = 0.0;
        let mut rt_weighted = 0.0;
        let (mut arrivals, mut failures) = (0, 0);
        let mut ticks = 0;
        let mut done = false;
        for _ in 0..self.control_interval {
            let t = self.offset + self.tick;
            let out = step(
                &mut self.state,
                &actions,
                self.load.rate_at(t),
                self.load.forecast_at(t),
                self.tick,
                &self.ctx,
                &mut self.rng,
            )?;
            actions.clear();
            reward_sum += out.reward.reward;
            rt_weighted += out.record.mean_rt_for_reward * out.record.arrivals() as f64;
            arrivals += out.record.arrivals();
            failures += out.record.failures;
            ticks += 1;
            self.tick += 1;
            self.state_vec = out.observation.flatten();
            if self.keep_records {
                self.records.push(out.record);
            }
            if out.done {
                done = true;
                break;
            }
        }
        Ok(EnvStep {
            next_state: self.state_vec.clone(),
            reward: reward_sum / ticks as f64,
            done,
            mean_rt_ms: if arrivals == 0 { 0.0 } else { rt_weighted / arrivals as f64 },
            arrivals,
            failures,
        })
    }
}
