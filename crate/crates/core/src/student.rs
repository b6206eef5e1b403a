//! Per-deployment student networks, the guidance buffer they learn from, and
//! the scaling procedure that turns Q-values into resource changes.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Deployment, DeploymentAction, ObservationBlock, ObservationVector, Resource, UtilizationMatrix};
use crate::neural::{accumulate_batch, Activation, Adam, DenseNet, Optimizer, Parameterized, TextReader, TextWriter};
use crate::par::Execution;
use crate::{Error, Result};

/// Observation block plus machine context.
pub const STUDENT_INPUTS: usize = ObservationVector::BLOCK + 4;
pub const STUDENT_HIDDEN: usize = 48;
/// Absolute value a Q-value must exceed before it changes anything.
pub const Q_THRESHOLD: f64 = 0.5;
pub const MIN_CPU_PER_REPLICA: f64 = 0.1;
pub const MIN_MEM_PER_REPLICA: f64 = 0.1;

pub type StudentFeatures = [f64; STUDENT_INPUTS];

/// Local observation block extended with the mean machine CPU and memory
/// utilization and the two utilization targets.
pub fn student_features(block: &ObservationBlock, utilization: &UtilizationMatrix, targets: (f64, f64)) -> StudentFeatures {
    let mut f = [0.0; STUDENT_INPUTS];
    f[..ObservationVector::BLOCK].copy_from_slice(block);
    f[5] = utilization.mean(Resource::Cpu);
    f[6] = utilization.mean(Resource::Mem);
    f[7] = targets.0;
    f[8] = targets.1;
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSteps {
    /// Cores added or removed per full-strength CPU action.
    pub cpu_step: f64,
    /// GB added or removed per full-strength memory action.
    pub memory_step: f64,
}

impl Default for ScalingSteps {
    fn default() -> Self {
        Self {
            cpu_step: 0.25,
            memory_step: 0.25,
        }
    }
}

/// Deployment sizing after applying one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledResources {
    pub cpu_per_replica: f64,
    pub mem_per_replica: f64,
    pub replicas: u32,
}

/// Applies one action to a deployment's sizing.
///
/// Each component acts only if its magnitude exceeds [`Q_THRESHOLD`]. Vertical
/// changes are `clip(q, -1, 1) * step`, floored at 0.1 cores / 0.1 GB.
/// Horizontal changes are `sign(q) * ceil(|clip(q)|)`, i.e. one replica,
/// clamped to `[min_replicas, max_replicas]`.
pub fn scale_deployment(q: DeploymentAction, deployment: &Deployment, steps: ScalingSteps, max_replicas: u32) -> ScaledResources {
    let mut out = ScaledResources {
        cpu_per_replica: deployment.cpu_per_replica,
        mem_per_replica: deployment.mem_per_replica,
        replicas: deployment.replicas,
    };
    if q.cpu_scaling.abs() > Q_THRESHOLD {
        let next = out.cpu_per_replica + q.cpu_scaling.clamp(-1.0, 1.0) * steps.cpu_step;
        out.cpu_per_replica = next.max(MIN_CPU_PER_REPLICA);
    }
    if q.memory_scaling.abs() > Q_THRESHOLD {
        let next = out.mem_per_replica + q.memory_scaling.clamp(-1.0, 1.0) * steps.memory_step;
        out.mem_per_replica = next.max(MIN_MEM_PER_REPLICA);
    }
    if q.horizontal_scaling.abs() > Q_THRESHOLD {
        let h = q.horizontal_scaling.clamp(-1.0, 1.0);
        let delta = h.signum() * h.abs().ceil();
        let target = (out.replicas as f64 + delta).max(0.0) as u32;
        let max = max_replicas.max(deployment.min_replicas());
        out.replicas = target.clamp(deployment.min_replicas(), max);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub state: StudentFeatures,
    pub teacher_q: [f64; 3],
}

/// Ring buffer of (local state, teacher Q-values) pairs for one deployment.
#[derive(Debug, Clone)]
pub struct DeploymentBuffer {
    capacity: usize,
    items: VecDeque<Guidance>,
}

impl DeploymentBuffer {
    pub const DEFAULT_CAPACITY: usize = 10_000;

    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Guidance> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Guidance> {
        self.items.iter()
    }

    /// Appends a pair, evicting the oldest one at capacity.
    pub fn record_guidance(&mut self, state: StudentFeatures, teacher_q: [f64; 3]) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(Guidance { state, teacher_q });
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..STUDENT_INPUTS).map(|i| format!("f{i}")).collect();
        header.extend(["q_cpu", "q_mem", "q_horizontal"].map(String::from));
        w.write_record(&header)?;
        for g in &self.items {
            let row: Vec<String> = g.state.iter().chain(&g.teacher_q).map(|v| format!("{v:?}")).collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>, capacity: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut buf = Self::new(capacity);
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let values: Vec<f64> = row
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), i + 2)))?;
            if values.len() != STUDENT_INPUTS + 3 {
                return Err(Error::dim("guidance row", STUDENT_INPUTS + 3, values.len()));
            }
            let mut state = [0.0; STUDENT_INPUTS];
            state.copy_from_slice(&values[..STUDENT_INPUTS]);
            buf.record_guidance(state, [values[9], values[10], values[11]]);
        }
        Ok(buf)
    }
}

/// A deployment's lightweight policy: 9 inputs, one tanh hidden layer of 48,
/// 3 tanh outputs (627 parameters).
#[derive(Debug, Clone)]
pub struct Student {
    pub net: DenseNet,
    optimizer: Adam,
}

impl Student {
    pub fn new(seed: u64) -> Self {
        let net = DenseNet::new(
            &[STUDENT_INPUTS, STUDENT_HIDDEN, DeploymentAction::DIM],
            &[Activation::Tanh, Activation::Tanh],
            seed,
        )
        .expect("static student shape is valid");
        Self::from_net(net).expect("static student shape is valid")
    }

    /// All-zero network: always outputs (0, 0, 0).
    pub fn zeros() -> Self {
        let net = DenseNet::zeros(
            &[STUDENT_INPUTS, STUDENT_HIDDEN, DeploymentAction::DIM],
            &[Activation::Tanh, Activation::Tanh],
        )
        .expect("static student shape is valid");
        Self::from_net(net).expect("static student shape is valid")
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.input_dim() != STUDENT_INPUTS || net.output_dim() != DeploymentAction::DIM {
            return Err(Error::dim("student net input", STUDENT_INPUTS, net.input_dim()));
        }
        Ok(Self {
            net,
            optimizer: Adam::default(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Deterministic forward pass.
    pub fn act(&self, features: &[f64]) -> Result<DeploymentAction> {
        if features.len() != STUDENT_INPUTS {
            return Err(Error::dim("student features", STUDENT_INPUTS, features.len()));
        }
        DeploymentAction::from_slice(&self.net.predict(features)?)
    }

    /// Mean squared error over the buffer, averaged over the three outputs.
    pub fn imitation_loss(&self, buffer: &DeploymentBuffer) -> Result<f64> {
        if buffer.is_empty() {
            return Err(Error::EmptyInput("imitation loss needs a non-empty buffer"));
        }
        let mut total = 0.0;
        for g in buffer.iter() {
            let y = self.net.predict(&g.state)?;
            total += y.iter().zip(&g.teacher_q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0;
        }
        Ok(total / buffer.len() as f64)
    }

    /// One Adam step on a uniformly sampled batch. Returns the batch loss
    /// before the step.
    pub fn imitation_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &DeploymentBuffer,
        batch_size: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<f64> {
        self.imitation_step_with(Execution::default(), buffer, batch_size, lr, rng)
    }

    pub fn imitation_step_with<R: Rng + ?Sized>(
        &mut self,
        exec: Execution,
        buffer: &DeploymentBuffer,
        batch_size: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<f64> {
        if buffer.is_empty() {
            return Err(Error::EmptyInput("imitation step needs a non-empty buffer"));
        }
        let n = batch_size.clamp(1, buffer.len());
        let picks: Vec<usize> = if n == buffer.len() {
            (0..n).collect()
        } else {
            sample(rng, buffer.len(), n).into_vec()
        };
        let batch: Vec<&Guidance> = picks.iter().map(|&i| &buffer.items[i]).collect();
        let scale = 1.0 / (3.0 * n as f64);
        let net = &self.net;
        let (mut grads, loss) = accumulate_batch(exec, net, &batch, |g, acc| {
            let (y, cache) = net.forward(&g.state)?;
            let diff: Vec<f64> = y.iter().zip(&g.teacher_q).map(|(a, b)| a - b).collect();
            let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d * scale).collect();
            net.backward_accumulate(&cache, &upstream, acc)?;
            Ok(diff.iter().map(|d| d * d).sum::<f64>() * scale)
        })?;
        if loss > 0.0 {
            self.optimizer.step(&mut self.net, &grads, lr)?;
        } else {
            grads.scale(0.0);
        }
        Ok(loss)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = TextWriter::new();
        self.net.write_text(&mut w);
        w.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = crate::neural::read_file(path)?;
        let net = DenseNet::read_text(&mut TextReader::new(path.display().to_string(), &text))?;
        Self::from_net(net)
    }
}
