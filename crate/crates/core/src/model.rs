//! Cluster domain model: machines, deployments, service chains, replica
//! placement and the per-machine utilization matrix.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const CAPACITY_EPS: f64 = 1e-9;

/// Adjustable resource types. The utilization matrix is indexed by these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resource {
    Cpu,
    Mem,
}

impl Resource {
    pub const ALL: [Resource; 2] = [Resource::Cpu, Resource::Mem];

    pub fn index(self) -> usize {
        match self {
            Resource::Cpu => 0,
            Resource::Mem => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub id: String,
    /// Cores.
    pub cpu_capacity: f64,
    /// GB.
    pub mem_capacity: f64,
}

impl Machine {
    pub fn capacity(&self, resource: Resource) -> f64 {
        match resource {
            Resource::Cpu => self.cpu_capacity,
            Resource::Mem => self.mem_capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub id: String,
    pub replicas: u32,
    /// Cores per replica.
    pub cpu_per_replica: f64,
    /// GB per replica.
    pub mem_per_replica: f64,
    #[serde(default)]
    pub brownout_allowed: bool,
    /// Service time of an idle station, milliseconds.
    pub base_latency_ms: f64,
    /// Requests per second one core can serve.
    pub rate_per_core: f64,
    #[serde(default)]
    pub optional_in_chain: bool,
}

impl Deployment {
    pub fn min_replicas(&self) -> u32 {
        if self.brownout_allowed {
            0
        } else {
            1
        }
    }

    pub fn demand(&self, resource: Resource) -> f64 {
        match resource {
            Resource::Cpu => self.cpu_per_replica,
            Resource::Mem => self.mem_per_replica,
        }
    }

    /// Requests per second the deployment can serve at its current size.
    pub fn service_capacity(&self) -> f64 {
        self.replicas as f64 * self.cpu_per_replica * self.rate_per_core
    }
}

/// An ordered path of deployments a request traverses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceChain {
    pub id: String,
    pub stations: Vec<String>,
    /// Fraction of total traffic entering this chain.
    pub weight: f64,
}

/// Declarative cluster description, as read from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub machines: Vec<Machine>,
    pub deployments: Vec<Deployment>,
    #[serde(default)]
    pub chains: Vec<ServiceChain>,
    /// Allow placements that push a machine above 100% of a resource.
    #[serde(default)]
    pub overcommit: bool,
}

impl ClusterSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// `u[r][k]`: fraction of machine `k`'s capacity of resource `r` claimed by
/// placed replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationMatrix {
    machines: usize,
    values: Vec<f64>,
}

impl UtilizationMatrix {
    pub fn zeros(machines: usize) -> Self {
        Self {
            machines,
            values: vec![0.0; Resource::ALL.len() * machines],
        }
    }

    /// Builds a matrix from one row per resource, in [`Resource::ALL`] order.
    pub fn from_rows(cpu: Vec<f64>, mem: Vec<f64>) -> Result<Self> {
        if cpu.len() != mem.len() {
            return Err(Error::dim("utilization rows", cpu.len(), mem.len()));
        }
        let machines = cpu.len();
        let mut values = cpu;
        values.extend(mem);
        Ok(Self { machines, values })
    }

    /// Same target for every machine.
    pub fn uniform(machines: usize, cpu: f64, mem: f64) -> Self {
        let mut values = vec![cpu; machines];
        values.extend(std::iter::repeat_n(mem, machines));
        Self { machines, values }
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn get(&self, resource: Resource, machine: usize) -> f64 {
        self.values[resource.index() * self.machines + machine]
    }

    pub fn set(&mut self, resource: Resource, machine: usize, value: f64) {
        self.values[resource.index() * self.machines + machine] = value;
    }

    pub fn row(&self, resource: Resource) -> &[f64] {
        let start = resource.index() * self.machines;
        &self.values[start..start + self.machines]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self, resource: Resource) -> f64 {
        if self.machines == 0 {
            return 0.0;
        }
        self.row(resource).iter().sum::<f64>() / self.machines as f64
    }
}

/// The three continuous scaling signals an agent emits for one deployment.
///
/// Policy networks produce values in `[-1, 1]`; anything outside is clipped
/// when the action is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeploymentAction {
    pub cpu_scaling: f64,
    pub memory_scaling: f64,
    pub horizontal_scaling: f64,
}

impl DeploymentAction {
    pub const DIM: usize = 3;

    pub fn new(cpu_scaling: f64, memory_scaling: f64, horizontal_scaling: f64) -> Self {
        Self {
            cpu_scaling,
            memory_scaling,
            horizontal_scaling,
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match values {
            [cpu, mem, horizontal] => Ok(Self::new(*cpu, *mem, *horizontal)),
            _ => Err(Error::dim("deployment action", Self::DIM, values.len())),
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.cpu_scaling, self.memory_scaling, self.horizontal_scaling]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Per-deployment observation block:
/// `[cpu utilization, memory utilization, replicas / max_replicas,
///   normalized arrival rate, predicted next-interval utilization]`.
pub type ObservationBlock = [f64; ObservationVector::BLOCK];

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    blocks: Vec<ObservationBlock>,
}

impl ObservationVector {
    pub const BLOCK: usize = 5;

    pub fn new(blocks: Vec<ObservationBlock>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[ObservationBlock] {
        &self.blocks
    }

    pub fn block(&self, deployment: usize) -> &ObservationBlock {
        &self.blocks[deployment]
    }

    /// Concatenation of all blocks in deployment order; the teacher's state.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }
}

/// One invariant violation found by [`ClusterState::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub reason: String,
}

impl Violation {
    fn new(subject: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.reason)
    }
}

/// Result of a replica-count change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacementReport {
    pub requested: u32,
    pub placed: u32,
    /// Replicas that could not be placed for lack of capacity.
    pub shortfall: u32,
}

/// Placement of one deployment: `(machine id, replica count)` in the order
/// machines were first used. Scale-in drains the last entry first.
pub type PlacementList = Vec<(String, u32)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub machines: Vec<Machine>,
    pub deployments: Vec<Deployment>,
    pub chains: Vec<ServiceChain>,
    pub placement: BTreeMap<String, PlacementList>,
    pub utilization: UtilizationMatrix,
    pub overcommit: bool,
}

impl ClusterState {
    /// Builds a state from a spec, placing every deployment's replicas
    /// first-fit in deployment order. Fails if the spec violates any invariant
    /// or the initial replicas do not fit.
    pub fn from_spec(spec: &ClusterSpec) -> Result<Self> {
        let mut state = ClusterState {
            machines: spec.machines.clone(),
            deployments: spec.deployments.clone(),
            chains: spec.chains.clone(),
            placement: BTreeMap::new(),
            utilization: UtilizationMatrix::zeros(spec.machines.len()),
            overcommit: spec.overcommit,
        };
        let wanted: Vec<u32> = state.deployments.iter().map(|d| d.replicas).collect();
        for d in &mut state.deployments {
            d.replicas = 0;
        }
        let static_issues: Vec<Violation> = state
            .validate()
            .into_iter()
            .filter(|v| !v.reason.contains("minimum"))
            .collect();
        if !static_issues.is_empty() {
            return Err(Error::Cluster(join_violations(&static_issues)));
        }
        for (i, n) in wanted.into_iter().enumerate() {
            let id = state.deployments[i].id.clone();
            let report = state.place(i, n);
            if report.shortfall > 0 {
                return Err(Error::Cluster(format!(
                    "initial placement of `{id}` is short by {} replicas",
                    report.shortfall
                )));
            }
        }
        let issues = state.validate();
        if !issues.is_empty() {
            return Err(Error::Cluster(join_violations(&issues)));
        }
        Ok(state)
    }

    pub fn deployment_index(&self, id: &str) -> Option<usize> {
        self.deployments.iter().position(|d| d.id == id)
    }

    pub fn deployment(&self, id: &str) -> Option<&Deployment> {
        self.deployments.iter().find(|d| d.id == id)
    }

    pub fn machine_index(&self, id: &str) -> Option<usize> {
        self.machines.iter().position(|m| m.id == id)
    }

    /// Lists every invariant violation. Empty means the state is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let mut seen = HashSet::new();
        for m in &self.machines {
            if !seen.insert(m.id.as_str()) {
                out.push(Violation::new(&m.id, "duplicate machine id"));
            }
            if !(m.cpu_capacity > 0.0 && m.cpu_capacity.is_finite()) {
                out.push(Violation::new(&m.id, "cpu capacity must be positive"));
            }
            if !(m.mem_capacity > 0.0 && m.mem_capacity.is_finite()) {
                out.push(Violation::new(&m.id, "memory capacity must be positive"));
            }
        }

        let max_cpu = self.machines.iter().map(|m| m.cpu_capacity).fold(0.0, f64::max);
        let max_mem = self.machines.iter().map(|m| m.mem_capacity).fold(0.0, f64::max);
        let mut seen = HashSet::new();
        for d in &self.deployments {
            if !seen.insert(d.id.as_str()) {
                out.push(Violation::new(&d.id, "duplicate deployment id"));
            }
            if d.replicas < d.min_replicas() {
                out.push(Violation::new(
                    &d.id,
                    "replicas below minimum of 1 (brownout not allowed)",
                ));
            }
            if !(d.cpu_per_replica > 0.0 && d.cpu_per_replica <= max_cpu + CAPACITY_EPS) {
                out.push(Violation::new(
                    &d.id,
                    format!("cpu per replica {} outside (0, {max_cpu}]", d.cpu_per_replica),
                ));
            }
            if !(d.mem_per_replica > 0.0 && d.mem_per_replica <= max_mem + CAPACITY_EPS) {
                out.push(Violation::new(
                    &d.id,
                    format!("memory per replica {} outside (0, {max_mem}]", d.mem_per_replica),
                ));
            }
            if !(d.base_latency_ms > 0.0 && d.base_latency_ms.is_finite()) {
                out.push(Violation::new(&d.id, "base latency must be positive"));
            }
            if !(d.rate_per_core > 0.0 && d.rate_per_core.is_finite()) {
                out.push(Violation::new(&d.id, "rate per core must be positive"));
            }
            let placed: u32 = self
                .placement
                .get(&d.id)
                .map(|p| p.iter().map(|(_, n)| n).sum())
                .unwrap_or(0);
            if placed != d.replicas {
                out.push(Violation::new(
                    &d.id,
                    format!("placement sums to {placed} but replicas = {}", d.replicas),
                ));
            }
        }

        for (dep, list) in &self.placement {
            if self.deployment(dep).is_none() {
                out.push(Violation::new(dep, "placement for unknown deployment"));
            }
            for (machine, _) in list {
                if self.machine_index(machine).is_none() {
                    out.push(Violation::new(
                        dep,
                        format!("placed on unknown machine `{machine}`"),
                    ));
                }
            }
        }

        if !self.chains.is_empty() {
            let mut total = 0.0;
            for c in &self.chains {
                total += c.weight;
                if c.stations.is_empty() {
                    out.push(Violation::new(&c.id, "chain has no stations"));
                }
                if !(0.0..=1.0).contains(&c.weight) {
                    out.push(Violation::new(&c.id, "chain weight outside [0, 1]"));
                }
                for s in &c.stations {
                    if self.deployment(s).is_none() {
                        out.push(Violation::new(
                            &c.id,
                            format!("station `{s}` is not a deployment"),
                        ));
                    }
                }
            }
            if (total - 1.0).abs() > 1e-9 {
                out.push(Violation::new("chains", format!("weights sum to {total}, not 1")));
            }
        }

        if self.utilization.machines() == self.machines.len() {
            let fresh = self.machine_utilization();
            for (k, m) in self.machines.iter().enumerate() {
                for r in Resource::ALL {
                    let stored = self.utilization.get(r, k);
                    let recomputed = fresh.get(r, k);
                    if (stored - recomputed).abs() > 1e-9 {
                        out.push(Violation::new(
                            &m.id,
                            format!("stored {r:?} utilization {stored} != {recomputed}"),
                        ));
                    }
                    if !self.overcommit && recomputed > 1.0 + CAPACITY_EPS {
                        out.push(Violation::new(
                            &m.id,
                            format!("{r:?} over capacity ({recomputed:.3})"),
                        ));
                    }
                }
            }
        } else {
            out.push(Violation::new(
                "utilization",
                "matrix width does not match machine count",
            ));
        }
        out
    }

    /// Recomputes `u[r][k]` from the placement.
    pub fn machine_utilization(&self) -> UtilizationMatrix {
        let mut used = UtilizationMatrix::zeros(self.machines.len());
        for d in &self.deployments {
            let Some(list) = self.placement.get(&d.id) else {
                continue;
            };
            for (machine, count) in list {
                if let Some(k) = self.machine_index(machine) {
                    for r in Resource::ALL {
                        let v = used.get(r, k) + *count as f64 * d.demand(r);
                        used.set(r, k, v);
                    }
                }
            }
        }
        for (k, m) in self.machines.iter().enumerate() {
            for r in Resource::ALL {
                used.set(r, k, used.get(r, k) / m.capacity(r));
            }
        }
        used
    }

    /// Sets a deployment's replica count. New replicas go first-fit over
    /// machines in id order; removed replicas come from the most recently
    /// used machine first. Replicas that do not fit are dropped and reported
    /// as shortfall; the deployment's `replicas` always equals what is placed.
    pub fn apply_placement(&mut self, deployment_id: &str, new_replicas: u32) -> Result<PlacementReport> {
        let idx = self.deployment_index(deployment_id).ok_or_else(|| Error::Unknown {
            kind: "deployment",
            id: deployment_id.to_string(),
        })?;
        let dep = &self.deployments[idx];
        if new_replicas < dep.min_replicas() {
            return Err(Error::MinReplicas {
                id: dep.id.clone(),
                min: dep.min_replicas(),
                requested: new_replicas,
            });
        }
        Ok(self.place(idx, new_replicas))
    }

    /// Changes a deployment's per-replica size. Without over-commit the change
    /// is refused (returns `false`) if any hosting machine would exceed
    /// capacity.
    pub fn resize_replicas(&mut self, deployment_id: &str, cpu: f64, mem: f64) -> Result<bool> {
        let idx = self.deployment_index(deployment_id).ok_or_else(|| Error::Unknown {
            kind: "deployment",
            id: deployment_id.to_string(),
        })?;
        let max_cpu = self.machines.iter().map(|m| m.cpu_capacity).fold(0.0, f64::max);
        let max_mem = self.machines.iter().map(|m| m.mem_capacity).fold(0.0, f64::max);
        let cpu = cpu.min(max_cpu);
        let mem = mem.min(max_mem);
        let dep = &self.deployments[idx];
        if !self.overcommit {
            let (dcpu, dmem) = (cpu - dep.cpu_per_replica, mem - dep.mem_per_replica);
            if let Some(list) = self.placement.get(&dep.id) {
                for (machine, count) in list {
                    let k = self.machine_index(machine).expect("placement references known machine");
                    let m = &self.machines[k];
                    let n = *count as f64;
                    let cpu_after = self.utilization.get(Resource::Cpu, k) * m.cpu_capacity + n * dcpu;
                    let mem_after = self.utilization.get(Resource::Mem, k) * m.mem_capacity + n * dmem;
                    if cpu_after > m.cpu_capacity + CAPACITY_EPS || mem_after > m.mem_capacity + CAPACITY_EPS {
                        return Ok(false);
                    }
                }
            }
        }
        let dep = &mut self.deployments[idx];
        dep.cpu_per_replica = cpu;
        dep.mem_per_replica = mem;
        self.utilization = self.machine_utilization();
        Ok(true)
    }

    fn place(&mut self, idx: usize, target: u32) -> PlacementReport {
        let dep = self.deployments[idx].clone();
        let list = self.placement.entry(dep.id.clone()).or_default();
        let mut current: u32 = list.iter().map(|(_, n)| n).sum();

        while current > target {
            let last = list.last_mut().expect("non-empty placement while replicas remain");
            last.1 -= 1;
            if last.1 == 0 {
                list.pop();
            }
            current -= 1;
        }

        if current < target {
            let mut order: Vec<usize> = (0..self.machines.len()).collect();
            order.sort_by(|&a, &b| self.machines[a].id.cmp(&self.machines[b].id));
            let mut free: Vec<(f64, f64)> = self
                .machines
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    (
                        m.cpu_capacity * (1.0 - self.utilization.get(Resource::Cpu, k)),
                        m.mem_capacity * (1.0 - self.utilization.get(Resource::Mem, k)),
                    )
                })
                .collect();
            while current < target {
                let fit = order.iter().copied().find(|&k| {
                    free[k].0 + CAPACITY_EPS >= dep.cpu_per_replica
                        && free[k].1 + CAPACITY_EPS >= dep.mem_per_replica
                });
                let chosen = match fit {
                    Some(k) => k,
                    None if self.overcommit => order
                        .iter()
                        .copied()
                        .max_by(|&a, &b| free[a].0.total_cmp(&free[b].0).then(b.cmp(&a)))
                        .expect("cluster has machines"),
                    None => break,
                };
                free[chosen].0 -= dep.cpu_per_replica;
                free[chosen].1 -= dep.mem_per_replica;
                let machine_id = &self.machines[chosen].id;
                match list.iter_mut().find(|(m, _)| m == machine_id) {
                    Some(entry) => entry.1 += 1,
                    None => list.push((machine_id.clone(), 1)),
                }
                current += 1;
            }
        }

        if list.is_empty() {
            self.placement.remove(&dep.id);
        }
        self.deployments[idx].replicas = current;
        self.utilization = self.machine_utilization();
        PlacementReport {
            requested: target,
            placed: current,
            shortfall: target - current,
        }
    }

    /// Machines hosting at least one replica of the deployment, as indices.
    pub fn hosts(&self, deployment_id: &str) -> Vec<usize> {
        self.placement
            .get(deployment_id)
            .map(|list| list.iter().filter_map(|(m, _)| self.machine_index(m)).collect())
            .unwrap_or_default()
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn machine(id: &str, cpu: f64, mem: f64) -> Machine {
        Machine {
            id: id.into(),
            cpu_capacity: cpu,
            mem_capacity: mem,
        }
    }

    fn deployment(id: &str, replicas: u32, cpu: f64) -> Deployment {
        Deployment {
            id: id.into(),
            replicas,
            cpu_per_replica: cpu,
            mem_per_replica: 0.5,
            brownout_allowed: false,
            base_latency_ms: 10.0,
            rate_per_core: 50.0,
            optional_in_chain: false,
        }
    }

    fn spec(machines: Vec<Machine>, deployments: Vec<Deployment>) -> ClusterSpec {
        ClusterSpec {
            machines,
            deployments,
            chains: vec![],
            overcommit: false,
        }
    }

    /// Independent utilization oracle: walk the placement map directly.
    fn brute_force_utilization(state: &ClusterState) -> Vec<[f64; 2]> {
        state
            .machines
            .iter()
            .map(|m| {
                let mut cpu = 0.0;
                let mut mem = 0.0;
                for (dep, list) in &state.placement {
                    let d = state.deployments.iter().find(|d| &d.id == dep).unwrap();
                    for (mid, n) in list {
                        if mid == &m.id {
                            cpu += *n as f64 * d.cpu_per_replica;
                            mem += *n as f64 * d.mem_per_replica;
                        }
                    }
                }
                [cpu / m.cpu_capacity, mem / m.mem_capacity]
            })
            .collect()
    }

    #[test]
    fn consistent_single_machine_spec_is_valid() {
        let state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0)],
            vec![deployment("d", 2, 1.0)],
        ))
        .unwrap();
        assert!(state.validate().is_empty());
    }

    #[test]
    fn zero_replicas_without_brownout_is_one_violation() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0)],
            vec![deployment("d", 1, 1.0)],
        ))
        .unwrap();
        state.placement.clear();
        state.deployments[0].replicas = 0;
        state.utilization = state.machine_utilization();
        let v = state.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].subject, "d");
    }

    #[test]
    fn placement_mismatch_is_one_violation() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0)],
            vec![deployment("d", 2, 1.0)],
        ))
        .unwrap();
        state.placement.get_mut("d").unwrap()[0].1 = 3;
        state.utilization = state.machine_utilization();
        let v = state.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].reason.contains("placement sums to 3"));
    }

    #[test]
    fn first_fit_fills_the_first_machine() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0), machine("m2", 8.0, 8.0)],
            vec![deployment("d", 1, 1.0)],
        ))
        .unwrap();
        state.apply_placement("d", 3).unwrap();
        assert_eq!(state.placement["d"], vec![("m1".to_string(), 3)]);
    }

    #[test]
    fn first_fit_spills_when_machine_is_nearly_full() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0), machine("m2", 8.0, 8.0)],
            vec![deployment("big", 1, 7.5), deployment("d", 1, 1.0)],
        ))
        .unwrap();
        // big takes 7.5 cores on m1, so d lands on m2.
        assert_eq!(state.placement["d"], vec![("m2".to_string(), 1)]);
        state.apply_placement("d", 2).unwrap();
        assert_eq!(state.placement["d"], vec![("m2".to_string(), 2)]);
    }

    #[test]
    fn scale_in_drains_last_filled_machine() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 2.0, 8.0), machine("m2", 8.0, 8.0)],
            vec![deployment("d", 4, 1.0)],
        ))
        .unwrap();
        assert_eq!(
            state.placement["d"],
            vec![("m1".to_string(), 2), ("m2".to_string(), 2)]
        );
        state.apply_placement("d", 2).unwrap();
        assert_eq!(state.placement["d"], vec![("m1".to_string(), 2)]);
        // m1: 2 cores of 2, m2 now empty.
        let u = state.machine_utilization();
        assert_eq!(u.get(Resource::Cpu, 0), 1.0);
        assert_eq!(u.get(Resource::Cpu, 1), 0.0);
        assert_eq!(u.get(Resource::Mem, 0), 1.0 / 8.0);
    }

    #[test]
    fn shortfall_is_reported() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 2.0, 8.0)],
            vec![deployment("d", 1, 1.0)],
        ))
        .unwrap();
        let report = state.apply_placement("d", 5).unwrap();
        assert_eq!(report.placed, 2);
        assert_eq!(report.shortfall, 3);
        assert_eq!(state.deployments[0].replicas, 2);
        assert!(state.validate().is_empty());
    }

    #[test]
    fn min_replicas_violation_is_an_error() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0)],
            vec![deployment("d", 1, 1.0)],
        ))
        .unwrap();
        assert!(matches!(
            state.apply_placement("d", 0),
            Err(Error::MinReplicas { .. })
        ));
    }

    #[test]
    fn utilization_examples() {
        let state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0), machine("m2", 8.0, 8.0)],
            vec![deployment("d", 4, 1.0)],
        ))
        .unwrap();
        let u = state.machine_utilization();
        assert_eq!(u.get(Resource::Cpu, 0), 0.5);
        // Empty machine.
        assert_eq!(u.get(Resource::Cpu, 1), 0.0);
        assert_eq!(u.get(Resource::Mem, 1), 0.0);
    }

    #[test]
    fn resize_refused_when_host_would_overflow() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 4.0, 8.0)],
            vec![deployment("d", 4, 1.0)],
        ))
        .unwrap();
        assert!(!state.resize_replicas("d", 1.25, 0.5).unwrap());
        assert_eq!(state.deployments[0].cpu_per_replica, 1.0);
        assert!(state.resize_replicas("d", 0.75, 0.5).unwrap());
        assert_eq!(state.machine_utilization().get(Resource::Cpu, 0), 0.75);
    }

    #[test]
    fn validate_is_idempotent() {
        let mut state = ClusterState::from_spec(&spec(
            vec![machine("m1", 8.0, 8.0)],
            vec![deployment("d", 2, 1.0)],
        ))
        .unwrap();
        state.deployments[0].rate_per_core = -1.0;
        let before = state.clone();
        let a = state.validate();
        let b = state.validate();
        assert_eq!(a, b);
        assert_eq!(state, before);
    }

    proptest! {
        #[test]
        fn placement_tracks_replicas_and_matches_oracle(
            ops in proptest::collection::vec((0usize..3, 1u32..12), 1..40),
        ) {
            let mut state = ClusterState::from_spec(&spec(
                vec![machine("a", 8.0, 8.0), machine("b", 6.0, 4.0), machine("c", 8.0, 8.0)],
                vec![deployment("x", 1, 1.0), deployment("y", 1, 1.5), deployment("z", 1, 0.5)],
            )).unwrap();
            for (d, n) in ops {
                let id = state.deployments[d].id.clone();
                state.apply_placement(&id, n).unwrap();
                let total: u32 = state.placement.get(&id).map(|l| l.iter().map(|(_, c)| c).sum()).unwrap_or(0);
                prop_assert_eq!(total, state.deployments[d].replicas);
                let oracle = brute_force_utilization(&state);
                for (k, o) in oracle.iter().enumerate() {
                    prop_assert!((state.utilization.get(Resource::Cpu, k) - o[0]).abs() < 1e-12);
                    prop_assert!((state.utilization.get(Resource::Mem, k) - o[1]).abs() < 1e-12);
                    prop_assert!(o[0] <= 1.0 + 1e-9 && o[1] <= 1.0 + 1e-9);
                }
                prop_assert!(state.validate().is_empty());
            }
        }
    }
}
