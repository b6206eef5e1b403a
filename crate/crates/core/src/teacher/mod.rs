//! The central TD3 agent: actor, twin critics, target copies, replay buffer
//! and the training loop.

mod buffer;
mod toy;

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use buffer::{Experience, ReplayBuffer};
pub use toy::TrackingEnv;

use crate::neural::{
    accumulate_batch, read_file, soft_update, Activation, Adam, DenseNet, GradientSet, Optimizer, Parameterized,
    TextReader, TextWriter,
};
use crate::par::Execution;
use crate::sim::Environment;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TD3Config {
    pub gamma: f64,
    /// Polyak factor: `target <- polyak * target + (1 - polyak) * online`.
    pub polyak: f64,
    pub policy_update: u64,
    /// Exploration noise standard deviation.
    pub sigma: f64,
    /// Target-policy smoothing noise standard deviation.
    pub target_sigma: f64,
    pub noise_clip: f64,
    pub a_low: f64,
    pub a_high: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps with uniform random actions before any update.
    pub warmup_steps: u64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub seed: u64,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl Default for TD3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            polyak: 0.995,
            policy_update: 2,
            sigma: 0.1,
            target_sigma: 0.2,
            noise_clip: 0.5,
            a_low: -1.0,
            a_high: 1.0,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup_steps: 1_000,
            episodes: 300,
            steps_per_episode: 1_000,
            seed: 0,
            hidden: 64,
            actor_lr: 1e-4,
            critic_lr: 3e-3,
        }
    }
}

impl TD3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.polyak >= 0.0 && self.polyak < 1.0) {
            return bad("polyak must lie in [0, 1)");
        }
        if !(self.noise_clip > 0.0) {
            return bad("noise_clip must be positive");
        }
        if !(self.a_low < self.a_high) {
            return bad("a_low must be below a_high");
        }
        if self.policy_update == 0 {
            return bad("policy_update must be at least 1");
        }
        if !(self.sigma >= 0.0 && self.target_sigma >= 0.0) {
            return bad("noise standard deviations must be non-negative");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.hidden == 0 {
            return bad("batch_size, buffer_capacity and hidden must be positive");
        }
        Ok(())
    }
}

const OUTPUT_INIT_SCALE: f64 = 0.01;

/// `y = r + gamma * (1 - d) * min(q1, q2)`.
pub fn td_target(reward: f64, done: bool, gamma: f64, q1: f64, q2: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
    }
}

/// Losses and update flags from one [`TD3Agent::train_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: (f64, f64),
    pub actor_loss: Option<f64>,
}

/// Actor `state -> hidden -> hidden -> action` (tanh output) and twin critics
/// `state ++ action -> hidden -> hidden -> 1`, each with a target copy.
#[derive(Debug, Clone)]
pub struct TD3Agent {
    pub config: TD3Config,
    pub actor: DenseNet,
    pub critic1: DenseNet,
    pub critic2: DenseNet,
    pub actor_target: DenseNet,
    pub critic1_target: DenseNet,
    pub critic2_target: DenseNet,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    state_dim: usize,
    action_dim: usize,
    updates: u64,
    exec: Execution,
}

impl TD3Agent {
    pub fn new(state_dim: usize, action_dim: usize, config: TD3Config) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Config("state and action dimensions must be positive".into()));
        }
        let h = config.hidden;
        let seed = config.seed;
        let mut actor = DenseNet::new(
            &[state_dim, h, h, action_dim],
            &[Activation::Relu, Activation::Relu, Activation::Tanh],
            seed,
        )?;
        // Start the policy near zero, away from tanh saturation.
        if let Some(out) = actor.layers_mut().last_mut() {
            out.weights.iter_mut().for_each(|w| *w *= OUTPUT_INIT_SCALE);
            out.bias.iter_mut().for_each(|b| *b *= OUTPUT_INIT_SCALE);
        }
        let critic_acts = [Activation::Relu, Activation::Relu, Activation::Identity];
        let critic1 = DenseNet::new(&[state_dim + action_dim, h, h, 1], &critic_acts, seed.wrapping_add(1))?;
        let critic2 = DenseNet::new(&[state_dim + action_dim, h, h, 1], &critic_acts, seed.wrapping_add(2))?;
        Ok(Self {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            actor_opt: Adam::default(),
            critic1_opt: Adam::default(),
            critic2_opt: Adam::default(),
            state_dim,
            action_dim,
            updates: 0,
            exec: Execution::default(),
            config,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Critic updates performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn clip(&self, x: f64) -> f64 {
        x.clamp(self.config.a_low, self.config.a_high)
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.state_dim {
            return Err(Error::dim("TD3 state", self.state_dim, s.len()));
        }
        Ok(())
    }

    /// `clip(pi(s) + eps, a_low, a_high)` with `eps ~ N(0, sigma^2)` per
    /// coordinate.
    pub fn select_action<R: Rng + ?Sized>(&self, s: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if !(sigma >= 0.0) {
            return Err(Error::Config("exploration sigma must be non-negative".into()));
        }
        let a = self.actor.predict(s)?;
        Ok(a.into_iter().map(|x| self.clip(x + gaussian(sigma, rng))).collect())
    }

    /// Uniform random action within bounds.
    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.action_dim)
            .map(|_| rng.random_range(self.config.a_low..=self.config.a_high))
            .collect()
    }

    /// `clip(pi'(s') + clip(eps, -c, c), a_low, a_high)`.
    pub fn smoothed_target_action<R: Rng + ?Sized>(
        &self,
        s_next: &[f64],
        sigma: f64,
        c: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_state(s_next)?;
        let a = self.actor_target.predict(s_next)?;
        Ok(a.into_iter()
            .map(|x| self.clip(x + gaussian(sigma, rng).clamp(-c, c)))
            .collect())
    }

    fn critic_input(s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(s.len() + a.len());
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        x
    }

    /// Target-critic values `(Q'1, Q'2)` at `(s', a')`.
    pub fn target_values(&self, s_next: &[f64], a_next: &[f64]) -> Result<(f64, f64)> {
        let x = Self::critic_input(s_next, a_next);
        Ok((self.critic1_target.predict(&x)?[0], self.critic2_target.predict(&x)?[0]))
    }

    /// Bootstrapped targets for a batch. Smoothing noise is drawn in batch
    /// order.
    pub fn td_targets<R: Rng + ?Sized>(&self, batch: &[&Experience], rng: &mut R) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|e| {
                let a2 = self.smoothed_target_action(&e.next_state, self.config.target_sigma, self.config.noise_clip, rng)?;
                let (q1, q2) = self.target_values(&e.next_state, &a2)?;
                Ok(td_target(e.reward, e.done, self.config.gamma, q1, q2))
            })
            .collect()
    }

    /// Mean squared error of `critic` against `targets` and its gradient.
    pub fn critic_loss_and_grads(
        &self,
        critic: &DenseNet,
        batch: &[&Experience],
        targets: &[f64],
    ) -> Result<(f64, GradientSet)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("critic update needs a non-empty batch"));
        }
        if targets.len() != batch.len() {
            return Err(Error::dim("critic targets", batch.len(), targets.len()));
        }
        let n = batch.len() as f64;
        let items: Vec<(&Experience, f64)> = batch.iter().copied().zip(targets.iter().copied()).collect();
        let (grads, loss) = accumulate_batch(self.exec, critic, &items, |(e, y), acc| {
            let (q, cache) = critic.forward(&Self::critic_input(&e.state, &e.action))?;
            let d = q[0] - y;
            critic.backward_accumulate(&cache, &[2.0 * d / n], acc)?;
            Ok(d * d / n)
        })?;
        Ok((loss, grads))
    }

    /// `-mean Q1(s, pi(s))` and its gradient with respect to the actor.
    pub fn actor_loss_and_grads(&self, batch: &[&Experience]) -> Result<(f64, GradientSet)> {
        let critic = &self.critic1;
        self.actor_loss_and_grads_with(batch, |s, a| {
            let (q, cache) = critic.forward(&Self::critic_input(s, a))?;
            let mut scratch = critic.zero_grads();
            let dx = critic.backward_accumulate(&cache, &[1.0], &mut scratch)?;
            Ok((q[0], dx[s.len()..].to_vec()))
        })
    }

    /// Actor loss and gradient against an arbitrary critic `q(s, a)` that
    /// returns its value and its gradient with respect to `a`.
    pub fn actor_loss_and_grads_with<Q>(&self, batch: &[&Experience], q: Q) -> Result<(f64, GradientSet)>
    where
        Q: Fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)> + Sync + Send,
    {
        if batch.is_empty() {
            return Err(Error::EmptyInput("actor update needs a non-empty batch"));
        }
        let n = batch.len() as f64;
        let actor = &self.actor;
        let (grads, loss) = accumulate_batch(self.exec, actor, batch, |e, acc| {
            let (a, cache) = actor.forward(&e.state)?;
            let (value, dq_da) = q(&e.state, &a)?;
            let upstream: Vec<f64> = dq_da.iter().map(|g| -g / n).collect();
            actor.backward_accumulate(&cache, &upstream, acc)?;
            Ok(-value / n)
        })?;
        Ok((loss, grads))
    }

    /// One Adam step on each critic towards the batch targets. Returns the
    /// losses before the step.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &[&Experience], rng: &mut R) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("critic update needs a non-empty batch"));
        }
        let targets = self.td_targets(batch, rng)?;
        let (l1, g1) = self.critic_loss_and_grads(&self.critic1, batch, &targets)?;
        let (l2, g2) = self.critic_loss_and_grads(&self.critic2, batch, &targets)?;
        let lr = self.config.critic_lr;
        self.critic1_opt.step(&mut self.critic1, &g1, lr)?;
        self.critic2_opt.step(&mut self.critic2, &g2, lr)?;
        Ok((l1, l2))
    }

    /// One Adam step on the actor against the first critic; critics are not
    /// modified. Returns the loss before the step.
    pub fn actor_update(&mut self, batch: &[&Experience]) -> Result<f64> {
        let (loss, grads) = self.actor_loss_and_grads(batch)?;
        self.apply_actor_grads(&grads)?;
        Ok(loss)
    }

    /// [`actor_update`](Self::actor_update) against a caller-supplied critic.
    pub fn actor_update_with<Q>(&mut self, batch: &[&Experience], q: Q) -> Result<f64>
    where
        Q: Fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)> + Sync + Send,
    {
        let (loss, grads) = self.actor_loss_and_grads_with(batch, q)?;
        self.apply_actor_grads(&grads)?;
        Ok(loss)
    }

    fn apply_actor_grads(&mut self, grads: &GradientSet) -> Result<()> {
        if grads.is_zero() {
            return Ok(());
        }
        self.actor_opt.step(&mut self.actor, grads, self.config.actor_lr)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let rho = self.config.polyak;
        soft_update(&mut self.actor_target, &self.actor, rho)?;
        soft_update(&mut self.critic1_target, &self.critic1, rho)?;
        soft_update(&mut self.critic2_target, &self.critic2, rho)
    }

    /// Critic update on a sampled batch; every `policy_update`-th call also
    /// updates the actor and the three targets.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats> {
        let batch = buffer.sample(self.config.batch_size, rng)?;
        let critic_loss = self.critic_update(&batch, rng)?;
        self.updates += 1;
        let actor_loss = if self.updates % self.config.policy_update == 0 {
            let loss = self.actor_update(&batch)?;
            self.soft_update_targets()?;
            Some(loss)
        } else {
            None
        };
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
        })
    }

    pub fn all_finite(&self) -> bool {
        [
            &self.actor,
            &self.critic1,
            &self.critic2,
            &self.actor_target,
            &self.critic1_target,
            &self.critic2_target,
        ]
        .iter()
        .all(|n| n.all_finite())
    }

    /// Writes the six networks; optimizer moments are not saved.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = TextWriter::new();
        w.line_usize(&[self.state_dim, self.action_dim, self.config.hidden]);
        for (tag, net) in self.named_nets() {
            w.line_words([tag]);
            net.write_text(&mut w);
        }
        w.save(path)
    }

    fn named_nets(&self) -> [(&'static str, &DenseNet); 6] {
        [
            ("actor", &self.actor),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("actor_target", &self.actor_target),
            ("critic1_target", &self.critic1_target),
            ("critic2_target", &self.critic2_target),
        ]
    }

    pub fn load(path: impl AsRef<Path>, config: TD3Config) -> Result<Self> {
        let path = path.as_ref();
        let text = read_file(path)?;
        let mut r = TextReader::new(path.display().to_string(), &text);
        let dims = r.line_usize()?;
        if dims.len() != 3 {
            return Err(r.error("expected `<state_dim> <action_dim> <hidden>`"));
        }
        let mut agent = Self::new(
            dims[0],
            dims[1],
            TD3Config {
                hidden: dims[2],
                ..config
            },
        )?;
        let mut nets = Vec::with_capacity(6);
        for tag in ["actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"] {
            r.expect_tag(tag)?;
            nets.push(DenseNet::read_text(&mut r)?);
        }
        for (dst, src) in [
            &mut agent.actor,
            &mut agent.critic1,
            &mut agent.critic2,
            &mut agent.actor_target,
            &mut agent.critic1_target,
            &mut agent.critic2_target,
        ]
        .into_iter()
        .zip(nets)
        {
            if dst.sizes() != src.sizes() {
                return Err(r.error("network shape does not match the header"));
            }
            *dst = src;
        }
        Ok(agent)
    }
}

/// Per-episode summary of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_rt_ms: f64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub episodes: Vec<EpisodeStats>,
}

impl TrainingCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["episode", "mean_reward", "mean_rt_ms", "failure_rate"])?;
        for e in &self.episodes {
            w.write_record([
                e.episode.to_string(),
                format!("{:?}", e.mean_reward),
                format!("{:?}", e.mean_rt_ms),
                format!("{:?}", e.failure_rate),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.mean_reward).collect()
    }
}

/// Agent, replay buffer, rng and step counter carried across training calls.
#[derive(Debug, Clone)]
pub struct Td3Trainer {
    pub agent: TD3Agent,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub env_steps: u64,
    pub next_episode: u64,
}

impl Td3Trainer {
    pub fn new(state_dim: usize, action_dim: usize, config: TD3Config) -> Result<Self> {
        let buffer = ReplayBuffer::new(config.buffer_capacity)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7D3_7D3);
        Ok(Self {
            agent: TD3Agent::new(state_dim, action_dim, config)?,
            buffer,
            rng,
            env_steps: 0,
            next_episode: 0,
        })
    }

    pub fn from_agent(agent: TD3Agent) -> Result<Self> {
        let buffer = ReplayBuffer::new(agent.config.buffer_capacity)?;
        let rng = ChaCha8Rng::seed_from_u64(agent.config.seed ^ 0x7D3_7D3);
        Ok(Self {
            agent,
            buffer,
            rng,
            env_steps: 0,
            next_episode: 0,
        })
    }

    /// Exploration action for the current step: uniform during warmup,
    /// noisy policy afterwards.
    pub fn explore(&mut self, s: &[f64]) -> Result<Vec<f64>> {
        if self.env_steps < self.agent.config.warmup_steps {
            Ok(self.agent.random_action(&mut self.rng))
        } else {
            let sigma = self.agent.config.sigma;
            self.agent.select_action(s, sigma, &mut self.rng)
        }
    }

    /// Stores a transition and, past warmup, performs one update.
    pub fn observe(&mut self, e: Experience) -> Result<Option<UpdateStats>> {
        self.buffer.push(e);
        self.env_steps += 1;
        if self.env_steps > self.agent.config.warmup_steps {
            Ok(Some(self.agent.train_step(&self.buffer, &mut self.rng)?))
        } else {
            Ok(None)
        }
    }

    /// Runs `episodes` episodes of at most `steps_per_episode` steps.
    pub fn run_episodes<E: Environment>(&mut self, env: &mut E, episodes: usize) -> Result<TrainingCurve> {
        if env.state_dim() != self.agent.state_dim() || env.action_dim() != self.agent.action_dim() {
            return Err(Error::dim("environment action", self.agent.action_dim(), env.action_dim()));
        }
        let mut curve = TrainingCurve::default();
        for _ in 0..episodes {
            let episode = self.next_episode;
            self.next_episode += 1;
            let mut s = env.reset(episode)?;
            let (mut reward_sum, mut steps) = (0.0, 0usize);
            let (mut rt_sum, mut arrivals, mut failures) = (0.0, 0u64, 0u64);
            for _ in 0..self.agent.config.steps_per_episode {
                let a = self.explore(&s)?;
                let out = env.step(&a)?;
                reward_sum += out.reward;
                steps += 1;
                rt_sum += out.mean_rt_ms * out.arrivals as f64;
                arrivals += out.arrivals;
                failures += out.failures;
                self.observe(Experience {
                    state: std::mem::take(&mut s),
                    action: a,
                    reward: out.reward,
                    next_state: out.next_state.clone(),
                    done: out.done,
                })?;
                s = out.next_state;
                if out.done {
                    break;
                }
            }
            let stats = EpisodeStats {
                episode: episode as usize,
                mean_reward: if steps == 0 { 0.0 } else { reward_sum / steps as f64 },
                mean_rt_ms: if arrivals == 0 { 0.0 } else { rt_sum / arrivals as f64 },
                failure_rate: if arrivals == 0 { 0.0 } else { failures as f64 / arrivals as f64 },
            };
            log::debug!(
                "episode {} reward {:.4} rt {:.1} ms failures {:.4}",
                stats.episode,
                stats.mean_reward,
                stats.mean_rt_ms,
                stats.failure_rate
            );
            curve.episodes.push(stats);
        }
        Ok(curve)
    }
}

/// Trains a fresh agent on `env` for `config.episodes` episodes.
pub fn train_td3<E: Environment>(env: &mut E, config: &TD3Config) -> Result<(TD3Agent, TrainingCurve)> {
    let mut trainer = Td3Trainer::new(env.state_dim(), env.action_dim(), config.clone())?;
    let curve = trainer.run_episodes(env, config.episodes)?;
    Ok((trainer.agent, curve))
}
