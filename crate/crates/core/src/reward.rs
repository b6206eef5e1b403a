//! QoS reward, utilization reward and their ratio.

use serde::{Deserialize, Serialize};

use crate::model::UtilizationMatrix;
use crate::{Error, Result};

/// Target CPU utilization per machine unless configured otherwise.
pub const DEFAULT_CPU_TARGET: f64 = 0.60;
/// Target memory utilization per machine unless configured otherwise.
pub const DEFAULT_MEM_TARGET: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    /// Maximum tolerated response time, ms.
    pub rt_max: f64,
    pub u_pred: UtilizationMatrix,
}

impl RewardConfig {
    pub fn new(rt_max: f64, u_pred: UtilizationMatrix) -> Result<Self> {
        if !(rt_max > 0.0) {
            return Err(Error::Config(format!("rt_max must be positive, got {rt_max}")));
        }
        if u_pred.values().iter().any(|&u| !(u > 0.0 && u < 1.0)) {
            return Err(Error::Config("utilization targets must lie in (0, 1)".into()));
        }
        Ok(Self { rt_max, u_pred })
    }

    /// Uniform targets for `machines` machines.
    pub fn uniform(rt_max: f64, machines: usize, cpu: f64, mem: f64) -> Result<Self> {
        Self::new(rt_max, UtilizationMatrix::uniform(machines, cpu, mem))
    }

    pub fn with_defaults(rt_max: f64, machines: usize) -> Result<Self> {
        Self::uniform(rt_max, machines, DEFAULT_CPU_TARGET, DEFAULT_MEM_TARGET)
    }

    pub fn reward(&self, rt: f64, u: &UtilizationMatrix) -> Result<RewardBreakdown> {
        let r_qos = qos_reward(rt, self.rt_max);
        let r_util = util_reward(u, &self.u_pred)?;
        Ok(RewardBreakdown {
            r_qos,
            r_util,
            reward: combined_reward(r_qos, r_util),
        })
    }
}

/// Serializable utilization targets, as they appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationTargets {
    pub cpu: f64,
    pub mem: f64,
}

impl Default for UtilizationTargets {
    fn default() -> Self {
        Self {
            cpu: DEFAULT_CPU_TARGET,
            mem: DEFAULT_MEM_TARGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_qos: f64,
    pub r_util: f64,
    pub reward: f64,
}

/// 1 when `rt <= rt_max`, otherwise `exp(-((rt - rt_max) / rt_max)^2)`.
pub fn qos_reward(rt: f64, rt_max: f64) -> f64 {
    if rt <= rt_max {
        1.0
    } else {
        let x = (rt - rt_max) / rt_max;
        (-(x * x)).exp()
    }
}

/// `sum_{k,r} |u[r][k] - target[r][k]|^3 / K + 1`.
///
/// Under-utilized entries contribute `(target - u)^3` and over-utilized
/// entries `(u - target)^3`; the two cases are decided per entry.
pub fn util_reward(u: &UtilizationMatrix, u_pred: &UtilizationMatrix) -> Result<f64> {
    if u.machines() != u_pred.machines() {
        return Err(Error::dim("utilization matrix machines", u_pred.machines(), u.machines()));
    }
    if u.machines() == 0 {
        return Err(Error::EmptyInput("utilization reward needs at least one machine"));
    }
    let sum: f64 = u
        .values()
        .iter()
        .zip(u_pred.values())
        .map(|(&x, &target)| {
            let dev = if x <= target { target - x } else { x - target };
            dev * dev * dev
        })
        .sum();
    Ok(sum / u.machines() as f64 + 1.0)
}

/// `r_qos / r_util`.
pub fn combined_reward(r_qos: f64, r_util: f64) -> f64 {
    r_qos / r_util
}

/// Diagnostic terms of the control objective: the distance between the scalar
/// utilization target (mean of `u_pred`) and the utilization reward, and the
/// worst QoS reward over a series of response times (1 for an empty series).
pub fn objective_gap(
    u: &UtilizationMatrix,
    u_pred: &UtilizationMatrix,
    rt_series: &[f64],
    rt_max: f64,
) -> Result<(f64, f64)> {
    let r_util = util_reward(u, u_pred)?;
    let target = u_pred.values().iter().sum::<f64>() / u_pred.values().len() as f64;
    let worst_qos = rt_series
        .iter()
        .map(|&rt| qos_reward(rt, rt_max))
        .fold(1.0, f64::min);
    Ok(((target - r_util).abs(), worst_qos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(u: f64) -> UtilizationMatrix {
        UtilizationMatrix::from_rows(vec![u], vec![0.75]).unwrap()
    }

    #[test]
    fn qos_branches() {
        assert_eq!(qos_reward(200.0, 200.0), 1.0);
        assert_eq!(qos_reward(0.0, 200.0), 1.0);
        assert!((qos_reward(400.0, 200.0) - (-1.0f64).exp()).abs() < 1e-9);
        assert!((qos_reward(400.0, 200.0) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn util_reward_examples() {
        let pred = UtilizationMatrix::uniform(1, 0.6, 0.75);
        assert_eq!(util_reward(&pred, &pred).unwrap(), 1.0);
        let r = util_reward(&single(0.2), &pred).unwrap();
        assert!((r - 1.064).abs() < 1e-12);
        // Two machines, deviations 0.1 and 0.3 on cpu, memory on target.
        let pred2 = UtilizationMatrix::uniform(2, 0.6, 0.75);
        let u = UtilizationMatrix::from_rows(vec![0.7, 0.3], vec![0.75, 0.75]).unwrap();
        let r = util_reward(&u, &pred2).unwrap();
        assert!((r - 1.014).abs() < 1e-12);
    }

    #[test]
    fn util_reward_shape_mismatch() {
        let a = UtilizationMatrix::uniform(2, 0.5, 0.5);
        let b = UtilizationMatrix::uniform(3, 0.5, 0.5);
        assert!(util_reward(&a, &b).is_err());
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_reward(1.0, 1.0), 1.0);
        assert_eq!(combined_reward(1.0, 2.0), 0.5);
    }

    #[test]
    fn objective_gap_cases() {
        let pred = UtilizationMatrix::uniform(2, 0.6, 0.8);
        let (gap, qos) = objective_gap(&pred, &pred, &[], 200.0).unwrap();
        assert!((gap - 0.3).abs() < 1e-12);
        assert_eq!(qos, 1.0);

        let mut last = (gap, qos);
        for step in 1..=10 {
            let d = step as f64 * 0.03;
            let u = UtilizationMatrix::uniform(2, 0.6 - d, 0.8 - d);
            let rt = 200.0 + 40.0 * step as f64;
            let (g, q) = objective_gap(&u, &pred, &[100.0, rt], 200.0).unwrap();
            assert!(g > last.0 && q < last.1);
            last = (g, q);
        }
    }

    proptest! {
        #[test]
        fn qos_is_bounded_and_decreasing(a in 0.0..5000.0f64, b in 0.0..5000.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (qa, qb) = (qos_reward(lo, 200.0), qos_reward(hi, 200.0));
            prop_assert!(qa > 0.0 || lo > 200.0 * 20.0);
            prop_assert!(qa <= 1.0 && qb <= qa);
            if lo > 200.0 && hi > lo + 1e-6 {
                prop_assert!(qb < qa || qb == 0.0);
            }
        }

        #[test]
        fn util_reward_cubic_homogeneity(
            devs in proptest::collection::vec(-0.05..0.05f64, 6),
            lambda in 1.0..4.0f64,
        ) {
            let pred = UtilizationMatrix::uniform(3, 0.6, 0.75);
            let cpu: Vec<f64> = devs[..3].iter().map(|d| 0.6 + d).collect();
            let mem: Vec<f64> = devs[3..].iter().map(|d| 0.75 + d).collect();
            let u = UtilizationMatrix::from_rows(cpu, mem).unwrap();
            let cpu2: Vec<f64> = devs[..3].iter().map(|d| 0.6 + lambda * d).collect();
            let mem2: Vec<f64> = devs[3..].iter().map(|d| 0.75 + lambda * d).collect();
            let u2 = UtilizationMatrix::from_rows(cpu2, mem2).unwrap();
            let base = util_reward(&u, &pred).unwrap() - 1.0;
            let scaled = util_reward(&u2, &pred).unwrap() - 1.0;
            prop_assert!(base >= 0.0);
            prop_assert!((scaled - lambda.powi(3) * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }

        #[test]
        fn combined_in_unit_interval(rt in 0.0..2000.0f64, u in proptest::collection::vec(0.0..1.5f64, 4)) {
            let pred = UtilizationMatrix::uniform(2, 0.6, 0.75);
            let m = UtilizationMatrix::from_rows(u[..2].to_vec(), u[2..].to_vec()).unwrap();
            let r = combined_reward(qos_reward(rt, 200.0), util_reward(&m, &pred).unwrap());
            prop_assert!(r > 0.0 && r <= 1.0);
        }
    }
}
