//! Microservice cluster simulator and a distributed reinforcement-learning
//! autoscaler.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: machines, deployments, service chains, placement and the
//!   per-machine utilization matrix.
//! - [`neural`]: dense networks and a GRU cell with hand-written backward
//!   passes, optimizers and a text checkpoint format.
//! - [`reward`]: QoS and utilization rewards and their combination.
//! - [`sim`]: the tick-based request-flow simulator and its RL environment
//!   wrapper.
//! - [`workload`]: trace ingestion, the utilization-to-request profiler and the
//!   GRU utilization forecaster.
//! - [`teacher`]: the central TD3 agent and its replay buffer.
//! - [`student`]: per-deployment imitation networks and the scaling procedure
//!   that turns Q-values into resource changes.
//! - [`orchestrator`]: the two-stage control loop, retraining notifier,
//!   threshold baseline, metrics and reports.
//! - [`cli`]: the `drpc` command line.
//!
//! Data-parallel loops (batched gradients, window evaluation, multi-seed runs)
//! go through [`par::Execution`]; with the `parallel` feature disabled every
//! path runs sequentially and produces bit-identical results.

pub mod cli;
pub mod error;
pub mod model;
pub mod neural;
pub mod orchestrator;
pub mod par;
pub mod reward;
pub mod sim;
pub mod student;
pub mod teacher;
pub mod workload;

pub use error::{Error, Result};
