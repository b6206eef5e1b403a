use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sim::{EnvStep, Environment};
use crate::{Error, Result};

/// Step size of the tracked utilization per unit action.
const MOVE: f64 = 0.2;
const TARGET: f64 = 0.6;

/// One-dimensional resource tracking: the state is a utilization `u`, the
/// action shifts it by `0.2 * a`, and the reward is `1 - (u - 0.6)^2`.
///
/// The task has no terminal state; episodes end by the trainer's step limit,
/// so `done` is never raised and values bootstrap through the cut.
#[derive(Debug, Clone)]
pub struct TrackingEnv {
    seed: u64,
    u: f64,
}

impl TrackingEnv {
    pub fn new(seed: u64) -> Self {
        Self { seed, u: 0.0 }
    }

    pub fn utilization(&self) -> f64 {
        self.u
    }
}

impl Environment for TrackingEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, episode: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(episode);
        self.u = rng.random_range(0.0..1.0);
        Ok(vec![self.u])
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if action.len() != 1 {
            return Err(Error::dim("tracking action", 1, action.len()));
        }
        self.u = (self.u + MOVE * action[0].clamp(-1.0, 1.0)).clamp(0.0, 1.0);
        Ok(EnvStep {
            next_state: vec![self.u],
            reward: 1.0 - (self.u - TARGET).powi(2),
            done: false,
            mean_rt_ms: 0.0,
            arrivals: 0,
            failures: 0,
        })
    }
}
