use std::collections::BTreeMap;

use crate::model::{ClusterState, DeploymentAction};

/// Scale-out trigger of the threshold autoscaler.
pub const BASELINE_CPU_THRESHOLD: f64 = 0.75;

/// Horizontal-only threshold autoscaler.
///
/// `cpu_util[i]` is deployment `i`'s mean CPU utilization across its replicas.
/// Above `threshold` the deployment gets one more replica, below half of it
/// one fewer, never going under one replica. Deployments inside the dead band
/// get no entry.
pub fn threshold_autoscaler(state: &ClusterState, cpu_util: &[f64], threshold: f64) -> BTreeMap<String, DeploymentAction> {
    let mut out = BTreeMap::new();
    for (d, &u) in state.deployments.iter().zip(cpu_util) {
        if u > threshold {
            out.insert(d.id.clone(), DeploymentAction::new(0.0, 0.0, 1.0));
        } else if u < threshold / 2.0 && d.replicas > 1 {
            out.insert(d.id.clone(), DeploymentAction::new(0.0, 0.0, -1.0));
        }
    }
    out
}
