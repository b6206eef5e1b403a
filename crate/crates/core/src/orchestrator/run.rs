use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baseline::{threshold_autoscaler, BASELINE_CPU_THRESHOLD};
use super::metrics::compute_metrics;
use super::notifier::RetrainingNotifier;
use super::report::Report;
use super::scenario::{Scenario, StudentConfig};
use crate::model::{DeploymentAction, ObservationVector};
use crate::par::Execution;
use crate::sim::{self, observe, traffic_shares, ClusterEnv, Environment, LoadSeries, SimLog};
use crate::student::{student_features, DeploymentBuffer, Student};
use crate::teacher::{Experience, TD3Agent, TD3Config, Td3Trainer, TrainingCurve};
use crate::{Error, Result};

const STUDENT_STREAM: u64 = 0x5717_DE47;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Drpc,
    TeacherOnly,
    ThresholdBaseline,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Drpc, Mode::TeacherOnly, Mode::ThresholdBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Drpc => "drpc",
            Mode::TeacherOnly => "teacher-only",
            Mode::ThresholdBaseline => "threshold-baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected drpc, teacher-only or threshold-baseline)")))
    }
}

/// Which controller issued the actions of a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Teacher,
    Students,
    Baseline,
}

/// The learners a run operates on; they keep learning across runs.
#[derive(Debug, Clone)]
pub struct Controllers {
    pub teacher: Td3Trainer,
    pub students: Vec<Student>,
    pub buffers: Vec<DeploymentBuffer>,
    /// Whether the teacher is in control at the start of the next run.
    pub training_mode: bool,
}

impl Controllers {
    /// Untrained teacher and students; the teacher starts in control.
    pub fn fresh(scenario: &Scenario, seed: u64) -> Result<Self> {
        let n = scenario.cluster.deployments.len();
        let teacher = Td3Trainer::new(
            n * ObservationVector::BLOCK,
            n * DeploymentAction::DIM,
            TD3Config {
                seed,
                ..scenario.teacher.clone()
            },
        )?;
        Ok(Self {
            teacher,
            students: (0..n as u64).map(|i| Student::new(seed.wrapping_add(100 + i))).collect(),
            buffers: Self::empty_buffers(n, &scenario.student),
            training_mode: true,
        })
    }

    /// A trained teacher, past its warmup, and trained students in control.
    pub fn trained(scenario: &Scenario, agent: TD3Agent, students: Vec<Student>) -> Result<Self> {
        let n = scenario.cluster.deployments.len();
        if students.len() != n {
            return Err(Error::dim("students", n, students.len()));
        }
        let mut teacher = Td3Trainer::from_agent(agent)?;
        teacher.env_steps = teacher.agent.config.warmup_steps;
        let c = Self {
            teacher,
            students,
            buffers: Self::empty_buffers(n, &scenario.student),
            training_mode: false,
        };
        c.check(n)?;
        Ok(c)
    }

    fn empty_buffers(n: usize, cfg: &StudentConfig) -> Vec<DeploymentBuffer> {
        (0..n).map(|_| DeploymentBuffer::new(cfg.buffer_capacity)).collect()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.teacher.agent.state_dim() != n * ObservationVector::BLOCK {
            return Err(Error::dim(
                "teacher state",
                n * ObservationVector::BLOCK,
                self.teacher.agent.state_dim(),
            ));
        }
        if self.teacher.agent.action_dim() != n * DeploymentAction::DIM {
            return Err(Error::dim(
                "teacher action",
                n * DeploymentAction::DIM,
                self.teacher.agent.action_dim(),
            ));
        }
        if self.students.len() != n {
            return Err(Error::dim("students", n, self.students.len()));
        }
        if self.buffers.len() != n {
            return Err(Error::dim("student buffers", n, self.buffers.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Mode,
    pub ticks: u64,
    pub seed: u64,
    /// Load-series tick the run starts at.
    pub start_tick: u64,
    /// Replaces the notifier's decision in drpc mode.
    pub notifier_override: Option<bool>,
    /// Update teacher weights while the teacher is in control.
    pub teacher_learning: bool,
    pub exec: Execution,
}

impl RunOptions {
    pub fn new(mode: Mode, ticks: u64, seed: u64) -> Self {
        Self {
            mode,
            ticks,
            seed,
            start_tick: 0,
            notifier_override: None,
            teacher_learning: true,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: SimLog,
    pub stages: Vec<Stage>,
    /// Mean tick reward of every control interval.
    pub interval_rewards: Vec<f64>,
    pub retrain_triggers: u64,
}

impl RunOutcome {
    pub fn ticks_in(&self, stage: Stage) -> usize {
        self.stages.iter().filter(|&&s| s == stage).count()
    }
}

/// Start tick for an evaluation seed: a seeded uniform offset into the load.
pub fn start_tick_for_seed(seed: u64, load: &LoadSeries) -> u64 {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..load.len_ticks())
}

/// Runs the control loop for `opts.ticks` ticks.
///
/// In drpc mode the teacher is in control while `training_mode` holds: every
/// control interval it picks a noisy action, the per-deployment slices are
/// recorded as guidance, and each student takes imitation steps. Otherwise
/// the students act every tick and their transitions are only stored in the
/// teacher's buffer. After every interval the notifier sees the interval's
/// mean reward; the teacher stays in control while it fires or until it has
/// held control for `min_teacher_intervals` intervals.
pub fn run_system(
    scenario: &Scenario,
    load: &LoadSeries,
    controllers: &mut Controllers,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let ctx = scenario.context()?;
    let mut state = scenario.initial_state()?;
    let n = state.deployments.len();
    controllers.check(n)?;
    let ids = scenario.deployment_ids();
    let ci = scenario.control_interval;
    let targets = ctx.targets();
    let min_teacher = scenario.student.min_teacher_intervals;

    let mut sim_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut student_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ STUDENT_STREAM);
    let mut notifier = RetrainingNotifier::new(scenario.notifier)?;
    let mut training = match opts.mode {
        Mode::Drpc => opts.notifier_override.unwrap_or(controllers.training_mode),
        Mode::TeacherOnly => true,
        Mode::ThresholdBaseline => false,
    };
    let mut teacher_intervals = 0u64;

    let shares = traffic_shares(&state);
    let rate0 = load.rate_at(opts.start_tick);
    let offered: Vec<f64> = shares.iter().map(|s| s * rate0).collect();
    let mut obs = observe(&state, &offered, load.forecast_at(opts.start_tick), &ctx);

    let mut out = RunOutcome {
        log: SimLog::new(ids.clone()),
        stages: Vec::with_capacity(opts.ticks as usize),
        interval_rewards: Vec::new(),
        retrain_triggers: 0,
    };
    let mut pending: Option<(Vec<f64>, Vec<f64>)> = None;
    let (mut reward_sum, mut reward_ticks) = (0.0, 0u64);

    for t in 0..opts.ticks {
        let lt = opts.start_tick + t;
        let boundary = t % ci == 0;
        let stage = match (opts.mode, training) {
            (Mode::ThresholdBaseline, _) => Stage::Baseline,
            (_, true) => Stage::Teacher,
            (_, false) => Stage::Students,
        };
        let mut actions = BTreeMap::new();
        match stage {
            Stage::Baseline => {
                let util: Vec<f64> = obs.blocks().iter().map(|b| b[0]).collect();
                actions = threshold_autoscaler(&state, &util, BASELINE_CPU_THRESHOLD);
            }
            Stage::Teacher if boundary => {
                let s = obs.flatten();
                let a = controllers.teacher.explore(&s)?;
                actions = ClusterEnv::unpack_actions(&state, &a)?;
                if opts.mode == Mode::Drpc {
                    for (i, block) in obs.blocks().iter().enumerate() {
                        let f = student_features(block, &state.utilization, targets);
                        let q = &a[i * DeploymentAction::DIM..(i + 1) * DeploymentAction::DIM];
                        controllers.buffers[i].record_guidance(f, [q[0], q[1], q[2]]);
                    }
                }
                pending = Some((s, a));
            }
            Stage::Teacher => {}
            Stage::Students => {
                let mut packed = Vec::with_capacity(n * DeploymentAction::DIM);
                for (i, block) in obs.blocks().iter().enumerate() {
                    let f = student_features(block, &state.utilization, targets);
                    let q = controllers.students[i].act(&f)?;
                    packed.extend(q.to_array());
                    actions.insert(ids[i].clone(), q);
                }
                if boundary {
                    pending = Some((obs.flatten(), packed));
                }
            }
        }

        let tick = sim::step(
            &mut state,
            &actions,
            load.rate_at(lt),
            load.forecast_at(lt),
            t,
            &ctx,
            &mut sim_rng,
        )?;
        reward_sum += tick.reward.reward;
        reward_ticks += 1;
        obs = tick.observation;
        out.log.push(tick.record);
        out.stages.push(stage);

        if (t + 1) % ci != 0 && t + 1 != opts.ticks {
            continue;
        }
        let r = reward_sum / reward_ticks as f64;
        (reward_sum, reward_ticks) = (0.0, 0);
        out.interval_rewards.push(r);
        if opts.mode == Mode::ThresholdBaseline {
            continue;
        }
        if let Some((s, a)) = pending.take() {
            let e = Experience {
                state: s,
                action: a,
                reward: r,
                next_state: obs.flatten(),
                done: false,
            };
            if stage == Stage::Teacher && opts.teacher_learning {
                controllers.teacher.observe(e)?;
            } else {
                controllers.teacher.buffer.push(e);
            }
        }
        if opts.mode != Mode::Drpc {
            continue;
        }
        if stage == Stage::Teacher {
            let cfg = &scenario.student;
            for (student, buffer) in controllers.students.iter_mut().zip(&controllers.buffers) {
                for _ in 0..cfg.imitation_steps {
                    student.imitation_step_with(opts.exec, buffer, cfg.batch_size, cfg.lr, &mut student_rng)?;
                }
            }
            teacher_intervals += 1;
        }
        let fired = notifier.observe(r);
        if fired {
            out.retrain_triggers += 1;
        }
        let next = match opts.notifier_override {
            Some(v) => v,
            None if training => fired || teacher_intervals < min_teacher,
            None => fired,
        };
        if next && !training {
            teacher_intervals = 0;
            log::info!("tick {t}: retraining notifier handed control to the teacher");
        } else if !next && training {
            log::info!("tick {t}: students take over");
        }
        training = next;
    }
    if opts.mode == Mode::Drpc {
        controllers.training_mode = training;
    }
    Ok(out)
}

/// Result of [`train_teacher`].
#[derive(Debug, Clone)]
pub struct TeacherTraining {
    pub agent: TD3Agent,
    pub curve: TrainingCurve,
    /// Guidance recorded from rollouts of the trained teacher, one buffer per
    /// deployment.
    pub buffers: Vec<DeploymentBuffer>,
}

/// Trains the teacher on the cluster environment, then records guidance from
/// `student.guidance_episodes` exploratory rollouts of the trained policy.
pub fn train_teacher(
    exec: Execution,
    scenario: &Scenario,
    load: &LoadSeries,
    seed: u64,
    episodes: usize,
) -> Result<TeacherTraining> {
    let mut env = ClusterEnv::new(
        scenario.initial_state()?,
        scenario.context()?,
        load.clone(),
        scenario.control_interval,
        seed,
    )?;
    let config = TD3Config {
        seed,
        episodes,
        ..scenario.teacher.clone()
    };
    let agent = TD3Agent::new(env.state_dim(), env.action_dim(), config)?.with_execution(exec);
    let mut trainer = Td3Trainer::from_agent(agent)?;
    let curve = trainer.run_episodes(&mut env, episodes)?;
    let buffers = collect_guidance(
        &trainer.agent,
        &mut env,
        scenario,
        episodes as u64,
        scenario.student.guidance_episodes,
        seed,
    )?;
    Ok(TeacherTraining {
        agent: trainer.agent,
        curve,
        buffers,
    })
}

/// Rolls out `agent` with its exploration noise for `episodes` episodes
/// (numbered from `first_episode`) and records each deployment's slice of
/// every action next to that deployment's local features.
pub fn collect_guidance(
    agent: &TD3Agent,
    env: &mut ClusterEnv,
    scenario: &Scenario,
    first_episode: u64,
    episodes: usize,
    seed: u64,
) -> Result<Vec<DeploymentBuffer>> {
    let n = env.deployments();
    let mut buffers: Vec<DeploymentBuffer> =
        (0..n).map(|_| DeploymentBuffer::new(scenario.student.buffer_capacity)).collect();
    let targets = env.context().targets();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STUDENT_STREAM);
    for e in 0..episodes as u64 {
        let mut s = env.reset(first_episode + e)?;
        for _ in 0..agent.config.steps_per_episode {
            let a = agent.select_action(&s, agent.config.sigma, &mut rng)?;
            for (i, block) in s.chunks(ObservationVector::BLOCK).enumerate() {
                let mut b = [0.0; ObservationVector::BLOCK];
                b.copy_from_slice(block);
                let f = student_features(&b, &env.cluster().utilization, targets);
                let q = &a[i * DeploymentAction::DIM..(i + 1) * DeploymentAction::DIM];
                buffers[i].record_guidance(f, [q[0], q[1], q[2]]);
            }
            let step = env.step(&a)?;
            s = step.next_state;
            if step.done {
                break;
            }
        }
    }
    Ok(buffers)
}

#[derive(Debug, Clone)]
pub struct StudentFit {
    pub student: Student,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Offline imitation: one fresh student per buffer, trained for
/// `cfg.offline_steps` steps. Students train independently, in parallel when
/// `exec` allows.
pub fn train_students(
    exec: Execution,
    buffers: &[DeploymentBuffer],
    cfg: &StudentConfig,
    seed: u64,
) -> Result<Vec<StudentFit>> {
    let jobs: Vec<(usize, &DeploymentBuffer)> = buffers.iter().enumerate().collect();
    exec.map(&jobs, |&(i, buffer)| {
        let mut student = Student::new(seed.wrapping_add(100 + i as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STUDENT_STREAM ^ i as u64);
        let initial_loss = student.imitation_loss(buffer)?;
        for _ in 0..cfg.offline_steps {
            student.imitation_step_with(Execution::Sequential, buffer, cfg.batch_size, cfg.lr, &mut rng)?;
        }
        let final_loss = student.imitation_loss(buffer)?;
        Ok(StudentFit {
            student,
            initial_loss,
            final_loss,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub mode: Mode,
    pub seed: u64,
    pub outcome: RunOutcome,
}

/// Runs every (mode, seed) pair from a copy of `controllers`, in parallel
/// when `exec` allows. Each seed starts at [`start_tick_for_seed`], the same
/// for every mode.
pub fn evaluate(
    exec: Execution,
    scenario: &Scenario,
    load: &LoadSeries,
    controllers: &Controllers,
    modes: &[Mode],
    seeds: &[u64],
    ticks: u64,
) -> Result<Vec<EvalRun>> {
    let jobs: Vec<(Mode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    exec.map(&jobs, |&(mode, seed)| {
        let mut c = controllers.clone();
        let opts = RunOptions {
            start_tick: start_tick_for_seed(seed, load),
            exec: Execution::Sequential,
            ..RunOptions::new(mode, ticks, seed)
        };
        let outcome = run_system(scenario, load, &mut c, &opts)?;
        Ok(EvalRun { mode, seed, outcome })
    })
    .into_iter()
    .collect()
}

/// Per-run summaries plus one pooled summary per mode, in first-seen mode
/// order.
pub fn build_report(config: serde_json::Value, runs: &[EvalRun], tick_s: f64) -> Result<Report> {
    let mut report = Report {
        config,
        runs: Vec::with_capacity(runs.len()),
        modes: Vec::new(),
    };
    let mut modes: Vec<Mode> = Vec::new();
    for r in runs {
        report
            .runs
            .push(compute_metrics(r.mode.name(), Some(r.seed), &[&r.outcome.log], tick_s)?);
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    for m in modes {
        let logs: Vec<&SimLog> = runs.iter().filter(|r| r.mode == m).map(|r| &r.outcome.log).collect();
        report.modes.push(compute_metrics(m.name(), None, &logs, tick_s)?);
    }
    Ok(report)
}
