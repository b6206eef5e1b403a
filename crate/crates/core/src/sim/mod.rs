//! Tick-based simulation of request flow through service chains.
//!
//! Each tick applies pending scaling actions, draws Poisson arrivals, splits
//! them across chains, admits at most each station's capacity, and scores the
//! tick with the reward model. There are no random faults: requests fail only
//! when a station is saturated or a mandatory station has no replicas.

mod env;
mod log;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use env::{ClusterEnv, EnvStep, Environment, LoadSeries};
pub use log::{weighted_percentile, LatencySample, SimLog, SimLogRecord};

use crate::model::{ClusterState, DeploymentAction, ObservationBlock, ObservationVector, Resource, ServiceChain};
use crate::reward::{RewardBreakdown, RewardConfig};
use crate::student::{scale_deployment, ScalingSteps};
use crate::{Error, Result};

/// Cap on the utilization features so saturated or empty stations stay finite.
pub const RHO_FEATURE_CAP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Seconds per tick.
    pub tick: f64,
    /// Maximum tolerated response time, ms.
    pub rt_max: f64,
    /// Latency of a saturated station, ms.
    pub l_max: f64,
    pub seed: u64,
    /// Latency multiplier for stations on memory-overcommitted machines.
    pub mem_penalty: f64,
    pub max_replicas: u32,
    /// Ticks per episode; `done` is raised on the last one.
    pub horizon: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tick: 1.0,
            rt_max: 200.0,
            l_max: 5000.0,
            seed: 0,
            mem_penalty: 2.0,
            max_replicas: 16,
            horizon: 288,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tick > 0.0) {
            return Err(Error::Config("tick must be positive".into()));
        }
        if !(self.rt_max > 0.0) {
            return Err(Error::Config("rt_max must be positive".into()));
        }
        if !(self.l_max > self.rt_max) {
            return Err(Error::Config("l_max must exceed rt_max".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one tick".into()));
        }
        Ok(())
    }
}

/// Everything a tick needs besides the mutable cluster state.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub config: SimConfig,
    pub reward: RewardConfig,
    pub steps: ScalingSteps,
    /// Arrival rate (req/s) that maps to 1.0 in the normalized-rate feature.
    pub rate_norm: f64,
}

impl SimContext {
    pub fn new(config: SimConfig, reward: RewardConfig, steps: ScalingSteps, rate_norm: f64) -> Result<Self> {
        config.validate()?;
        if !(rate_norm > 0.0) {
            return Err(Error::Config("rate_norm must be positive".into()));
        }
        Ok(Self {
            config,
            reward,
            steps,
            rate_norm,
        })
    }

    /// Mean utilization targets (cpu, mem) across machines.
    pub fn targets(&self) -> (f64, f64) {
        (self.reward.u_pred.mean(Resource::Cpu), self.reward.u_pred.mean(Resource::Mem))
    }
}

/// Poisson arrival count with mean `rate * tick`.
pub fn generate_arrivals<R: Rng + ?Sized>(rate: f64, tick: f64, rng: &mut R) -> u64 {
    let mean = rate * tick;
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// `base * (1 + rho / (1 - rho))` below saturation, capped at `l_max`;
/// `l_max` at or above saturation.
pub fn station_latency(rho: f64, base: f64, l_max: f64) -> f64 {
    if rho < 1.0 {
        (base * (1.0 + rho / (1.0 - rho))).min(l_max)
    } else {
        l_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChainOutcome {
    Success { response_time_ms: f64 },
    /// An optional station had no replicas and was skipped.
    Degraded { response_time_ms: f64 },
    Failure,
}

impl ChainOutcome {
    pub fn response_time(&self) -> Option<f64> {
        match *self {
            ChainOutcome::Success { response_time_ms } | ChainOutcome::Degraded { response_time_ms } => {
                Some(response_time_ms)
            }
            ChainOutcome::Failure => None,
        }
    }
}

/// Outcome of one request that has been admitted at every station.
/// `rho` is indexed like `state.deployments`.
pub fn route_chain(chain: &ServiceChain, state: &ClusterState, rho: &[f64], config: &SimConfig) -> Result<ChainOutcome> {
    let mut total = 0.0;
    let mut degraded = false;
    for station in &chain.stations {
        let idx = state.deployment_index(station).ok_or_else(|| Error::Unknown {
            kind: "deployment",
            id: station.clone(),
        })?;
        let dep = &state.deployments[idx];
        if dep.replicas == 0 {
            if dep.optional_in_chain {
                degraded = true;
                continue;
            }
            return Ok(ChainOutcome::Failure);
        }
        let mut latency = station_latency(rho[idx], dep.base_latency_ms, config.l_max);
        if state.overcommit && state.hosts(&dep.id).iter().any(|&k| state.utilization.get(Resource::Mem, k) > 1.0) {
            latency *= config.mem_penalty;
        }
        total += latency;
    }
    Ok(if degraded {
        ChainOutcome::Degraded { response_time_ms: total }
    } else {
        ChainOutcome::Success { response_time_ms: total }
    })
}

/// Result of [`step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: SimLogRecord,
    pub observation: ObservationVector,
    pub reward: RewardBreakdown,
    pub done: bool,
}

/// Fraction of total traffic each deployment sees (chain weight times visits).
pub fn traffic_shares(state: &ClusterState) -> Vec<f64> {
    let mut shares = vec![0.0; state.deployments.len()];
    for c in &state.chains {
        for s in &c.stations {
            if let Some(i) = state.deployment_index(s) {
                shares[i] += c.weight;
            }
        }
    }
    shares
}

/// Observation for the current placement given per-deployment offered rates
/// (req/s) and a total forecast rate for the next interval.
pub fn observe(state: &ClusterState, offered: &[f64], forecast_rate: f64, ctx: &SimContext) -> ObservationVector {
    let shares = traffic_shares(state);
    let blocks = state
        .deployments
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let capacity = d.service_capacity();
            let load_ratio = |rate: f64| -> f64 {
                if rate <= 0.0 {
                    0.0
                } else if capacity <= 0.0 {
                    RHO_FEATURE_CAP
                } else {
                    (rate / capacity).min(RHO_FEATURE_CAP)
                }
            };
            let hosts = state.hosts(&d.id);
            let mem = if hosts.is_empty() {
                0.0
            } else {
                hosts.iter().map(|&k| state.utilization.get(Resource::Mem, k)).sum::<f64>() / hosts.len() as f64
            };
            let block: ObservationBlock = [
                load_ratio(offered[i]),
                mem,
                d.replicas as f64 / ctx.config.max_replicas.max(1) as f64,
                offered[i] / ctx.rate_norm,
                load_ratio(forecast_rate * shares[i]),
            ];
            block
        })
        .collect();
    ObservationVector::new(blocks)
}

/// Applies actions in deployment-id order. Returns the total placement
/// shortfall.
pub fn apply_actions(
    state: &mut ClusterState,
    actions: &BTreeMap<String, DeploymentAction>,
    ctx: &SimContext,
) -> Result<u32> {
    let mut shortfall = 0;
    for (id, action) in actions {
        let dep = state.deployment(id).ok_or_else(|| Error::Unknown {
            kind: "deployment",
            id: id.clone(),
        })?;
        let scaled = scale_deployment(*action, dep, ctx.steps, ctx.config.max_replicas);
        if scaled.cpu_per_replica != dep.cpu_per_replica || scaled.mem_per_replica != dep.mem_per_replica {
            state.resize_replicas(id, scaled.cpu_per_replica, scaled.mem_per_replica)?;
        }
        if scaled.replicas != state.deployment(id).map(|d| d.replicas).unwrap_or(0) {
            shortfall += state.apply_placement(id, scaled.replicas)?.shortfall;
        }
    }
    Ok(shortfall)
}

/// Advances the simulation by one tick.
///
/// `tick` is the absolute tick index; `done` is raised when `tick + 1` is a
/// multiple of the configured horizon.
pub fn step<R: Rng + ?Sized>(
    state: &mut ClusterState,
    actions: &BTreeMap<String, DeploymentAction>,
    arrival_rate: f64,
    forecast_rate: f64,
    tick: u64,
    ctx: &SimContext,
    rng: &mut R,
) -> Result<StepOutcome> {
    if !(arrival_rate >= 0.0) {
        return Err(Error::Config(format!("arrival rate must be non-negative, got {arrival_rate}")));
    }
    for c in &state.chains {
        for s in &c.stations {
            if state.deployment_index(s).is_none() {
                return Err(Error::Config(format!("chain `{}` references missing deployment `{s}`", c.id)));
            }
        }
    }
    let cfg = &ctx.config;
    let shortfall = apply_actions(state, actions, ctx)?;

    let arrivals = generate_arrivals(arrival_rate, cfg.tick, rng);
    let per_chain = split_by_weight(arrivals, &state.chains, rng);

    let n_dep = state.deployments.len();
    let mut offered_count = vec![0u64; n_dep];
    for (c, &n) in state.chains.iter().zip(&per_chain) {
        for s in &c.stations {
            offered_count[state.deployment_index(s).expect("checked above")] += n;
        }
    }
    let offered_rate: Vec<f64> = offered_count.iter().map(|&n| n as f64 / cfg.tick).collect();
    let mut rho = vec![0.0; n_dep];
    let mut admit = vec![1.0; n_dep];
    for (i, d) in state.deployments.iter().enumerate() {
        let capacity = d.service_capacity();
        if offered_count[i] == 0 {
            continue;
        }
        rho[i] = if capacity > 0.0 { offered_rate[i] / capacity } else { f64::INFINITY };
        let cap_count = (capacity * cfg.tick + 1e-9).floor();
        admit[i] = (cap_count / offered_count[i] as f64).min(1.0);
    }

    let mut successes = vec![0u64; per_chain.len()];
    let mut failures = vec![0u64; per_chain.len()];
    let mut latencies = Vec::new();
    let mut served = vec![0u64; n_dep];
    let mut rt_sum = 0.0;
    for (ci, c) in state.chains.iter().enumerate() {
        let mut survivors = per_chain[ci];
        if survivors == 0 {
            continue;
        }
        match route_chain(c, state, &rho, cfg)? {
            ChainOutcome::Failure => {
                failures[ci] = survivors;
                continue;
            }
            outcome => {
                for s in &c.stations {
                    let i = state.deployment_index(s).expect("checked above");
                    if state.deployments[i].replicas == 0 {
                        continue;
                    }
                    let admitted = (survivors as f64 * admit[i]).floor() as u64;
                    served[i] += admitted;
                    survivors = admitted;
                }
                let rt = outcome.response_time().expect("non-failure outcome has a response time");
                successes[ci] = survivors;
                failures[ci] = per_chain[ci] - survivors;
                if survivors > 0 {
                    latencies.push(LatencySample { ms: rt, count: survivors });
                    rt_sum += rt * survivors as f64;
                }
            }
        }
    }

    let total_success: u64 = successes.iter().sum();
    let total_fail: u64 = failures.iter().sum();
    let mean_rt = if arrivals == 0 {
        0.0
    } else {
        (rt_sum + total_fail as f64 * cfg.l_max) / arrivals as f64
    };
    let reward = ctx.reward.reward(mean_rt, &state.utilization)?;
    let observation = observe(state, &offered_rate, forecast_rate, ctx);

    let record = SimLogRecord {
        tick,
        chain_arrivals: per_chain,
        successes: total_success,
        failures: total_fail,
        chain_failures: failures,
        latencies,
        deployment_util: rho.iter().map(|r| r.min(RHO_FEATURE_CAP)).collect(),
        replicas: state.deployments.iter().map(|d| d.replicas).collect(),
        served,
        mean_rt_for_reward: mean_rt,
        shortfall,
        reward,
    };
    Ok(StepOutcome {
        record,
        observation,
        reward,
        done: (tick + 1) % cfg.horizon == 0,
    })
}

/// Multinomial split of `n` requests by chain weight, drawn as a sequence of
/// conditional binomials in chain order.
fn split_by_weight<R: Rng + ?Sized>(n: u64, chains: &[ServiceChain], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; chains.len()];
    let mut remaining = n;
    let mut weight_left: f64 = chains.iter().map(|c| c.weight).sum();
    for (i, c) in chains.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == chains.len() || weight_left <= c.weight {
            out[i] = remaining;
            break;
        }
        let p = (c.weight / weight_left).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, p).map(|b| b.sample(rng)).unwrap_or(0);
        out[i] = k;
        remaining -= k;
        weight_left -= c.weight;
    }
    out
}
