use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NotifierConfig {
    /// Retraining is requested when the mean of the monitored rewards falls
    /// strictly below this value.
    pub threshold: f64,
    /// Number of past rewards monitored.
    pub npr: usize,
}

impl Default for NotifierConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            npr: 20,
        }
    }
}

impl NotifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.npr == 0 {
            return Err(Error::Config("notifier npr must be at least 1".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("notifier threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Stores `current` at `iter mod npr` (npr being `history.len()`) and decides
/// whether retraining is due. Always false until `npr` rewards have been seen.
pub fn retraining_notifier(history: &mut [f64], current: f64, iter: u64, threshold: f64) -> bool {
    let npr = history.len();
    if npr == 0 {
        return false;
    }
    history[(iter % npr as u64) as usize] = current;
    if iter + 1 < npr as u64 {
        return false;
    }
    let mean = history.iter().sum::<f64>() / npr as f64;
    mean < threshold
}

/// Stateful wrapper that numbers the rewards it is fed.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrainingNotifier {
    config: NotifierConfig,
    history: Vec<f64>,
    iter: u64,
}

impl RetrainingNotifier {
    pub fn new(config: NotifierConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            history: vec![0.0; config.npr],
            config,
            iter: 0,
        })
    }

    pub fn config(&self) -> NotifierConfig {
        self.config
    }

    pub fn observed(&self) -> u64 {
        self.iter
    }

    pub fn observe(&mut self, reward: f64) -> bool {
        let out = retraining_notifier(&mut self.history, reward, self.iter, self.config.threshold);
        self.iter += 1;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truth_table() {
        let mut h = [0.0; 3];
        assert!(!retraining_notifier(&mut h, 0.0, 0, 0.5));
        assert!(!retraining_notifier(&mut h, 0.0, 1, 0.5));

        let mut h = [0.0; 3];
        let got: Vec<bool> = [0.4, 0.4, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &r)| retraining_notifier(&mut h, r, i as u64, 0.5))
            .collect();
        assert_eq!(got, [false, false, true]);

        let mut h = [0.0; 3];
        let got: Vec<bool> = [0.6, 0.5, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &r)| retraining_notifier(&mut h, r, i as u64, 0.5))
            .collect();
        assert_eq!(got, [false, false, false]);
    }

    #[test]
    fn window_slides() {
        let mut n = RetrainingNotifier::new(NotifierConfig { threshold: 0.5, npr: 2 }).unwrap();
        assert!(!n.observe(0.0));
        assert!(n.observe(0.0));
        assert!(n.observe(0.4));
        assert!(!n.observe(1.0));
        assert_eq!(n.observed(), 4);
        assert!(RetrainingNotifier::new(NotifierConfig { threshold: 0.5, npr: 0 }).is_err());
    }

    proptest! {
        #[test]
        fn triggers_iff_full_and_below(
            npr in 1usize..8,
            rewards in prop::collection::vec(0.0f64..1.0, 1..30),
            th in 0.0f64..1.0,
        ) {
            let mut n = RetrainingNotifier::new(NotifierConfig { threshold: th, npr }).unwrap();
            for (i, &r) in rewards.iter().enumerate() {
                let got = n.observe(r);
                let start = (i + 1).saturating_sub(npr);
                let window = &rewards[start..=i];
                let mean = window.iter().sum::<f64>() / npr as f64;
                prop_assert_eq!(got, i + 1 >= npr && mean < th);
            }
        }
    }
}
