use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ClusterState, Resource};
use crate::neural::{accumulate_batch, read_file, Activation, DenseNet, Optimizer, Sgd, TextReader, TextWriter};
use crate::par::Execution;
use crate::sim::{generate_arrivals, traffic_shares};
use crate::{Error, Result};

/// One profiling observation: host utilization and the request rate that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub cpu_util: f64,
    pub mem_util: f64,
    pub rate: f64,
}

pub const PROFILER_MIN_SAMPLES: usize = 10;
const PROFILER_BATCH: usize = 8;

/// Three-layer MLP from (cpu_util, mem_util) to requests/s. Targets are
/// divided by `target_scale` during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilerModel {
    pub net: DenseNet,
    pub target_scale: f64,
    pub final_loss: f64,
    /// Set when the training targets were constant.
    pub zero_variance: bool,
}

impl ProfilerModel {
    pub fn default_sizes() -> Vec<usize> {
        vec![2, 16, 16, 1]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = TextWriter::new();
        self.net.write_text(&mut w);
        w.line_words(["profiler"]);
        w.line_f64(&[self.target_scale, self.final_loss]);
        w.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_file(path)?;
        let mut r = TextReader::new(path.display().to_string(), &text);
        let net = DenseNet::read_text(&mut r)?;
        r.expect_tag("profiler")?;
        let v = r.line_f64_exact(2)?;
        Ok(Self {
            net,
            target_scale: v[0],
            final_loss: v[1],
            zero_variance: false,
        })
    }
}

/// Fits the profiler by minibatch gradient descent on mean squared error.
pub fn fit_profiler(samples: &[ProfileSample], epochs: usize, lr: f64, seed: u64) -> Result<ProfilerModel> {
    fit_profiler_with(Execution::default(), &ProfilerModel::default_sizes(), samples, epochs, lr, seed)
}

pub fn fit_profiler_with(
    exec: Execution,
    sizes: &[usize],
    samples: &[ProfileSample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ProfilerModel> {
    if samples.len() < PROFILER_MIN_SAMPLES {
        return Err(Error::Config(format!(
            "profiler needs at least {PROFILER_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if sizes.len() < 2 || sizes[0] != 2 || sizes[sizes.len() - 1] != 1 {
        return Err(Error::Config("profiler layers must map 2 inputs to 1 output".into()));
    }
    if samples
        .iter()
        .any(|s| !(s.cpu_util.is_finite() && s.mem_util.is_finite() && s.rate.is_finite()))
    {
        return Err(Error::Config("profiler samples must be finite".into()));
    }
    let first = samples[0].rate;
    let zero_variance = samples.iter().all(|s| s.rate == first);
    if zero_variance {
        log::warn!("profiler targets have zero variance; the model will fit a constant");
    }
    let max_abs = samples.iter().map(|s| s.rate.abs()).fold(0.0, f64::max);
    let target_scale = if max_abs > 0.0 { max_abs } else { 1.0 };

    let mut acts = vec![Activation::Tanh; sizes.len() - 2];
    acts.push(Activation::Identity);
    let mut net = DenseNet::new(sizes, &acts, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F11);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut opt = Sgd;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(PROFILER_BATCH) {
            let scale = 1.0 / chunk.len() as f64;
            let model = &net;
            let (grads, _) = accumulate_batch(exec, model, chunk, |&i, acc| {
                let s = samples[i];
                let (y, cache) = model.forward(&[s.cpu_util, s.mem_util])?;
                let d = y[0] - s.rate / target_scale;
                model.backward_accumulate(&cache, &[2.0 * d * scale], acc)?;
                Ok(d * d * scale)
            })?;
            opt.step(&mut net, &grads, lr)?;
        }
    }
    let final_loss = scaled_mse(&net, samples, target_scale)?;
    Ok(ProfilerModel {
        net,
        target_scale,
        final_loss,
        zero_variance,
    })
}

fn scaled_mse(net: &DenseNet, samples: &[ProfileSample], scale: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let d = net.predict(&[s.cpu_util, s.mem_util])?[0] - s.rate / scale;
        total += d * d;
    }
    Ok(total / samples.len() as f64)
}

/// Request rate implied by a host utilization pair, never negative.
pub fn util_to_requests(model: &ProfilerModel, cpu_util: f64, mem_util: f64) -> Result<f64> {
    let y = model.net.predict(&[cpu_util, mem_util])?[0] * model.target_scale;
    Ok(y.max(0.0))
}

/// Profiles the simulator: for each request rate, draws Poisson arrivals for
/// `ticks` ticks and records the CPU the offered work would occupy (cores
/// busy over total cluster cores) next to the reserved memory fraction.
pub fn profile_cluster(
    state: &ClusterState,
    rates: &[f64],
    ticks: usize,
    tick_s: f64,
    seed: u64,
) -> Result<Vec<ProfileSample>> {
    if ticks == 0 {
        return Err(Error::Config("profiling needs at least one tick per rate".into()));
    }
    let total_cores: f64 = state.machines.iter().map(|m| m.cpu_capacity).sum();
    if !(total_cores > 0.0) {
        return Err(Error::Cluster("cluster has no CPU capacity".into()));
    }
    // Core-seconds of work per request over the whole chain mix.
    let shares = traffic_shares(state);
    let work_per_request: f64 = state
        .deployments
        .iter()
        .zip(&shares)
        .map(|(d, s)| s / d.rate_per_core)
        .sum();
    let mem_util = state.utilization.mean(Resource::Mem);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rates.len() * ticks);
    for &rate in rates {
        if !(rate >= 0.0) {
            return Err(Error::Config(format!("profiling rate must be non-negative, got {rate}")));
        }
        for _ in 0..ticks {
            let n = generate_arrivals(rate, tick_s, &mut rng);
            let observed = n as f64 / tick_s;
            out.push(ProfileSample {
                cpu_util: (observed * work_per_request / total_cores).min(1.0),
                mem_util,
                rate: observed,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_samples(n: usize, seed: u64) -> Vec<ProfileSample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let cpu: f64 = rng.random_range(0.0..1.0);
                let mem: f64 = rng.random_range(0.0..1.0);
                ProfileSample {
                    cpu_util: cpu,
                    mem_util: mem,
                    rate: 100.0 * cpu,
                }
            })
            .collect()
    }

    fn linear_model() -> ProfilerModel {
        fit_profiler(&linear_samples(200, 1), 500, 0.1, 7).unwrap()
    }

    #[test]
    fn fits_a_linear_map() {
        let model = linear_model();
        let held = linear_samples(200, 99);
        let mse: f64 = held
            .iter()
            .map(|s| {
                let p = util_to_requests(&model, s.cpu_util, s.mem_util).unwrap();
                (p - s.rate).powi(2)
            })
            .sum::<f64>()
            / held.len() as f64;
        assert!(mse < 1.0, "held-out mse {mse}");
        let half = util_to_requests(&model, 0.5, 0.5).unwrap();
        assert!((half - 50.0).abs() <= 5.0, "{half}");
        assert!(util_to_requests(&model, 0.0, 0.3).unwrap() <= 5.0);
    }

    #[test]
    fn constant_targets_are_flagged_and_fitted() {
        let sample = ProfileSample {
            cpu_util: 0.3,
            mem_util: 0.5,
            rate: 42.0,
        };
        let samples = vec![sample; 20];
        let model = fit_profiler(&samples, 300, 0.1, 3).unwrap();
        assert!(model.zero_variance);
        let p = util_to_requests(&model, 0.3, 0.5).unwrap();
        assert!((p - 42.0).abs() <= 0.05 * 42.0, "{p}");
    }

    #[test]
    fn training_is_deterministic() {
        let s = linear_samples(50, 4);
        assert_eq!(fit_profiler(&s, 20, 0.1, 11).unwrap(), fit_profiler(&s, 20, 0.1, 11).unwrap());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let s = linear_samples(50, 4);
        let sizes = ProfilerModel::default_sizes();
        let a = fit_profiler_with(Execution::Sequential, &sizes, &s, 10, 0.1, 2).unwrap();
        let b = fit_profiler_with(Execution::Parallel, &sizes, &s, 10, 0.1, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(fit_profiler(&linear_samples(5, 1), 1, 0.1, 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = fit_profiler(&linear_samples(20, 1), 5, 0.1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiler.txt");
        model.save(&path).unwrap();
        let back = ProfilerModel::load(&path).unwrap();
        assert_eq!(back.net, model.net);
        assert_eq!(back.target_scale.to_bits(), model.target_scale.to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn output_is_never_negative(cpu in 0.0..=1.0f64, mem in 0.0..=1.0f64, seed in 0u64..4) {
            let samples: Vec<ProfileSample> = (0..12)
                .map(|i| ProfileSample { cpu_util: i as f64 / 12.0, mem_util: 0.5, rate: -50.0 + 10.0 * i as f64 })
                .collect();
            let model = fit_profiler(&samples, 3, 0.1, seed).unwrap();
            prop_assert!(util_to_requests(&model, cpu, mem).unwrap() >= 0.0);
        }
    }
}
