//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! fails if any criterion fails.
//!
//! ```text
//! cargo test -p drpc-core --test acceptance -- --nocapture
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drpc_core::cli::{run, Cli};
use drpc_core::model::{Deployment, DeploymentAction, UtilizationMatrix};
use drpc_core::neural::{Activation, DenseNet, GruCell, Parameterized};
use drpc_core::orchestrator::{
    build_workload, compute_metrics, evaluate, retraining_notifier, train_students, train_teacher, write_report,
    Controllers, Mode, Report, Scenario, REPORT_PERCENTILES,
};
use drpc_core::par::Execution;
use drpc_core::reward::{combined_reward, qos_reward, util_reward, RewardBreakdown};
use drpc_core::sim::{LatencySample, SimLog, SimLogRecord};
use drpc_core::student::{scale_deployment, DeploymentBuffer, ScalingSteps, Student};
use drpc_core::teacher::{td_target, train_td3, Experience, ReplayBuffer, TD3Agent, TD3Config, TrackingEnv};
use drpc_core::workload::{evaluate_mse, parse_trace, split_point, train_predictor, PredictorConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn data(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn c1_reward_formulas() -> Outcome {
    let rt_max = 200.0;
    let at_2x = qos_reward(2.0 * rt_max, rt_max);
    check((at_2x - (-1.0f64).exp()).abs() <= 1e-9, format!("qos(2 RT_max) = {at_2x}"))?;
    check(qos_reward(rt_max, rt_max) == 1.0, "qos(RT_max) != 1")?;
    let right = qos_reward(rt_max * (1.0 + 1e-9), rt_max);
    check((right - 1.0).abs() < 1e-12, format!("qos just above RT_max = {right}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for machines in 1..=8 {
        let cpu: Vec<f64> = (0..machines).map(|_| rng.random_range(0.0..1.0)).collect();
        let mem: Vec<f64> = (0..machines).map(|_| rng.random_range(0.0..1.0)).collect();
        let u = UtilizationMatrix::from_rows(cpu, mem).map_err(|e| e.to_string())?;
        let r = util_reward(&u, &u).map_err(|e| e.to_string())?;
        check(r == 1.0, format!("util_reward(u, u) = {r} with {machines} machines"))?;
    }

    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let k = rng.random_range(1..6);
        let row = |rng: &mut ChaCha8Rng| (0..k).map(|_| rng.random_range(0.0..1.5)).collect::<Vec<f64>>();
        let u = UtilizationMatrix::from_rows(row(&mut rng), row(&mut rng)).map_err(|e| e.to_string())?;
        let target = UtilizationMatrix::from_rows(row(&mut rng), row(&mut rng)).map_err(|e| e.to_string())?;
        let rt = rng.random_range(0.0..5.0 * rt_max);
        let r = combined_reward(qos_reward(rt, rt_max), util_reward(&u, &target).map_err(|e| e.to_string())?);
        worst = worst.max(r);
    }
    check(worst <= 1.0, format!("combined reward reached {worst}"))?;
    Ok(format!("qos(2 RT_max) - 1/e = {:.1e}, max combined over 1000 points = {worst:.4}", at_2x - (-1.0f64).exp()))
}

fn dense_case(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
    let acts: Vec<Activation> = (0..depth)
        .map(|_| [Activation::Tanh, Activation::Relu, Activation::Identity][rng.random_range(0..3)])
        .collect();
    let net = DenseNet::new(&sizes, &acts, seed).map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..sizes[depth]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |net: &DenseNet, x: &[f64]| -> f64 { net.predict(x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum() };
    let (_, cache) = net.forward(&x).map_err(|e| e.to_string())?;
    let (g, dx) = net.backward(&cache, &c).map_err(|e| e.to_string())?;
    let flat = g.flat();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let mut idx = 0;
    let counts: Vec<usize> = probe.tensors().iter().map(|t| t.len()).collect();
    for (t, &len) in counts.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + eps;
            let plus = objective(&probe, &x);
            probe.tensors_mut()[t][i] = orig - eps;
            let minus = objective(&probe, &x);
            probe.tensors_mut()[t][i] = orig;
            worst = worst.max(rel_err(flat[idx], (plus - minus) / (2.0 * eps)));
            idx += 1;
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += eps;
        let mut xm = x.clone();
        xm[i] -= eps;
        worst = worst.max(rel_err(dx[i], (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * eps)));
    }
    Ok(worst)
}

fn gru_case(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(1..=3);
    let hidden = rng.random_range(1..=5);
    let steps = rng.random_range(1..=4);
    let cell = GruCell::new(input, hidden, seed);
    let seq: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let c: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective =
        |cell: &GruCell, seq: &[Vec<f64>]| -> f64 { cell.run(seq).unwrap().iter().zip(&c).map(|(h, c)| h * c).sum() };
    let (_, cache) = cell.forward(&seq).map_err(|e| e.to_string())?;
    let (g, dx) = cell.backward(&cache, &c).map_err(|e| e.to_string())?;
    let flat = g.flat();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = cell.clone();
    let mut idx = 0;
    let counts: Vec<usize> = probe.tensors().iter().map(|t| t.len()).collect();
    for (t, &len) in counts.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + eps;
            let plus = objective(&probe, &seq);
            probe.tensors_mut()[t][i] = orig - eps;
            let minus = objective(&probe, &seq);
            probe.tensors_mut()[t][i] = orig;
            worst = worst.max(rel_err(flat[idx], (plus - minus) / (2.0 * eps)));
            idx += 1;
        }
    }
    for t in 0..steps {
        for i in 0..input {
            let mut sp = seq.clone();
            sp[t][i] += eps;
            let mut sm = seq.clone();
            sm[t][i] -= eps;
            worst = worst.max(rel_err(dx[t][i], (objective(&cell, &sp) - objective(&cell, &sm)) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

fn c2_gradients() -> Outcome {
    let (mut dense, mut gru): (f64, f64) = (0.0, 0.0);
    for seed in 0..25 {
        dense = dense.max(dense_case(seed)?);
        gru = gru.max(gru_case(seed)?);
    }
    check(dense < 1e-4, format!("dense worst relative error {dense:.2e}"))?;
    check(gru < 1e-4, format!("GRU worst relative error {gru:.2e}"))?;
    Ok(format!("25 dense + 25 GRU shapes, worst rel. error {dense:.1e} / {gru:.1e}"))
}

fn random_experience(rng: &mut ChaCha8Rng, done: bool) -> Experience {
    Experience {
        state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        action: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        reward: rng.random_range(-1.0..1.0),
        next_state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        done,
    }
}

fn c3_td3_mechanics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let r = rng.random_range(-10.0..10.0);
        let y = td_target(r, true, rng.random_range(0.0..1.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        check(y == r, "terminal target differs from reward")?;
    }

    let (mut double_q_checks, mut smooth_checks, mut steps_checked) = (0, 0, 0);
    for seed in 0..10u64 {
        let cfg = TD3Config {
            hidden: 8,
            batch_size: 16,
            seed,
            target_sigma: 1.5,
            noise_clip: 0.3,
            polyak: 0.9,
            ..Default::default()
        };
        let mut agent = TD3Agent::new(3, 2, cfg.clone()).map_err(|e| e.to_string())?;
        let mut buffer = ReplayBuffer::new(1000).map_err(|e| e.to_string())?;
        for _ in 0..200 {
            let done = rng.random_bool(0.1);
            buffer.push(random_experience(&mut rng, done));
        }
        for _ in 0..20 {
            let actor = agent.actor.clone();
            let targets = [agent.actor_target.clone(), agent.critic1_target.clone(), agent.critic2_target.clone()];
            agent.train_step(&buffer, &mut rng).map_err(|e| e.to_string())?;
            let policy_step = agent.updates() % cfg.policy_update == 0;
            let changed = [
                agent.actor != actor,
                agent.actor_target != targets[0],
                agent.critic1_target != targets[1],
                agent.critic2_target != targets[2],
            ];
            check(
                changed.iter().all(|&c| c == policy_step),
                format!("seed {seed} update {}: changed {changed:?}", agent.updates()),
            )?;
            steps_checked += 1;

            let e = random_experience(&mut rng, false);
            let a2 = agent
                .smoothed_target_action(&e.next_state, cfg.target_sigma, cfg.noise_clip, &mut rng)
                .map_err(|e| e.to_string())?;
            let (q1, q2) = agent.target_values(&e.next_state, &a2).map_err(|e| e.to_string())?;
            let y = td_target(e.reward, false, cfg.gamma, q1, q2);
            check(y <= e.reward + cfg.gamma * q1 && y <= e.reward + cfg.gamma * q2, "clipped double-Q violated")?;
            double_q_checks += 1;

            let clean: Vec<f64> = agent
                .actor_target
                .predict(&e.next_state)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|x| x.clamp(cfg.a_low, cfg.a_high))
                .collect();
            for _ in 0..20 {
                let a = agent
                    .smoothed_target_action(&e.next_state, cfg.target_sigma, cfg.noise_clip, &mut rng)
                    .map_err(|e| e.to_string())?;
                for (x, c) in a.iter().zip(&clean) {
                    check(
                        (x - c).abs() <= cfg.noise_clip + 1e-15 && (cfg.a_low..=cfg.a_high).contains(x),
                        format!("smoothed action {x} vs clean {c}"),
                    )?;
                }
                smooth_checks += 1;
            }
        }
    }
    Ok(format!(
        "1000 terminal targets, {double_q_checks} double-Q, {smooth_checks} smoothing, {steps_checked} delayed-update checks"
    ))
}

fn c4_td3_toy() -> Outcome {
    let cfg = TD3Config {
        episodes: 200,
        steps_per_episode: 25,
        seed: 0,
        ..Default::default()
    };
    let mut env = TrackingEnv::new(0);
    let (_, curve) = train_td3(&mut env, &cfg).map_err(|e| e.to_string())?;
    let r = curve.rewards();
    check(r.len() == 200, "wrong episode count")?;
    let last10 = r[190..].iter().sum::<f64>() / 10.0;
    let first = r.iter().position(|&x| x >= 0.9);
    check(last10 >= 0.9, format!("mean reward over episodes 190-199 = {last10:.4}"))?;
    Ok(format!(
        "mean reward over last 10 of 200 episodes = {last10:.4}, first episode >= 0.9: {}",
        first.map(|i| i.to_string()).unwrap_or_else(|| "none".into())
    ))
}

fn c5_imitation() -> Outcome {
    let mut teacher = DenseNet::new(&[9, 16, 3], &[Activation::Tanh, Activation::Tanh], 42).map_err(|e| e.to_string())?;
    for l in teacher.layers_mut() {
        l.weights.iter_mut().for_each(|w| *w *= 2.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut buffer = DeploymentBuffer::new(500);
    for _ in 0..500 {
        let s: [f64; 9] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let q = teacher.predict(&s).map_err(|e| e.to_string())?;
        buffer.record_guidance(s, [q[0], q[1], q[2]]);
    }
    let mut student = Student::new(9);
    let initial = student.imitation_loss(&buffer).map_err(|e| e.to_string())?;
    for _ in 0..2000 {
        student.imitation_step(&buffer, 32, 1e-3, &mut rng).map_err(|e| e.to_string())?;
    }
    let fin = student.imitation_loss(&buffer).map_err(|e| e.to_string())?;
    check(fin <= 0.1 * initial, format!("loss {initial:.5} -> {fin:.5}"))?;
    Ok(format!("loss {initial:.5} -> {fin:.5} ({:.1}% of initial)", 100.0 * fin / initial))
}

fn c6_notifier() -> Outcome {
    let mut h = [0.0; 3];
    check(!retraining_notifier(&mut h, 0.0, 0, 0.5) && !retraining_notifier(&mut h, 0.0, 1, 0.5), "fired before npr")?;
    for (rewards, want) in [([0.4, 0.4, 0.4], true), ([0.6, 0.5, 0.4], false)] {
        let mut h = [0.0; 3];
        let got: Vec<bool> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| retraining_notifier(&mut h, r, i as u64, 0.5))
            .collect();
        check(got == [false, false, want], format!("{rewards:?} gave {got:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cases = 0;
    while cases < 1000 {
        let npr = rng.random_range(1..10);
        let th = rng.random_range(0.0..1.0);
        let n = rng.random_range(1..25);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut h = vec![0.0; npr];
        for (i, &r) in rewards.iter().enumerate() {
            let got = retraining_notifier(&mut h, r, i as u64, th);
            let window = &rewards[(i + 1).saturating_sub(npr)..=i];
            let want = i + 1 >= npr && window.iter().sum::<f64>() / (npr as f64) < th;
            check(got == want, format!("npr {npr} th {th} iter {i}: got {got}"))?;
            cases += 1;
        }
    }
    Ok(format!("3 examples + {cases} random cases"))
}

fn deployment(replicas: u32, brownout: bool) -> Deployment {
    Deployment {
        id: "svc".into(),
        replicas,
        cpu_per_replica: 1.0,
        mem_per_replica: 1.0,
        brownout_allowed: brownout,
        base_latency_ms: 10.0,
        rate_per_core: 50.0,
        optional_in_chain: brownout,
    }
}

fn c7_scaling() -> Outcome {
    let steps = ScalingSteps::default();
    let d = deployment(3, false);
    let out = scale_deployment(DeploymentAction::new(0.4, -0.3, 0.2), &d, steps, 16);
    check(
        out.cpu_per_replica == 1.0 && out.mem_per_replica == 1.0 && out.replicas == 3,
        "below-threshold q changed the deployment",
    )?;
    let out = scale_deployment(DeploymentAction::new(0.8, 0.0, 0.0), &deployment(1, false), steps, 16);
    check((out.cpu_per_replica - 1.2).abs() < 1e-12, format!("cpu became {}", out.cpu_per_replica))?;
    let q = DeploymentAction::new(0.0, 0.0, -0.8);
    check(scale_deployment(q, &deployment(1, false), steps, 16).replicas == 1, "scale-in below 1 without brownout")?;
    check(scale_deployment(q, &deployment(1, true), steps, 16).replicas == 0, "brownout scale-in to 0 refused")?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut calls = 0;
    for _ in 0..200 {
        let brownout = rng.random_bool(0.5);
        let max = rng.random_range(1..12);
        let mut d = deployment(rng.random_range(if brownout { 0 } else { 1 }..=max), brownout);
        for _ in 0..20 {
            let q = DeploymentAction::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let out = scale_deployment(q, &d, steps, max);
            let quiet = [q.cpu_scaling, q.memory_scaling, q.horizontal_scaling].iter().all(|v| v.abs() <= 0.5);
            if quiet {
                check(
                    out.cpu_per_replica.to_bits() == d.cpu_per_replica.to_bits()
                        && out.mem_per_replica.to_bits() == d.mem_per_replica.to_bits()
                        && out.replicas == d.replicas,
                    "quiet q changed the deployment",
                )?;
            }
            check(
                out.replicas >= d.min_replicas() && out.replicas <= max,
                format!("replicas {} outside [{}, {max}]", out.replicas, d.min_replicas()),
            )?;
            d.cpu_per_replica = out.cpu_per_replica;
            d.mem_per_replica = out.mem_per_replica;
            d.replicas = out.replicas;
            calls += 1;
        }
    }
    Ok(format!("3 examples + {calls} random calls in 200 sequences"))
}

fn c8_predictor() -> Outcome {
    let trace = parse_trace(data("data/alibaba_sample.csv")).map_err(|e| e.to_string())?;
    let series = trace.aggregate();
    let model = train_predictor(&series, &PredictorConfig::default()).map_err(|e| e.to_string())?;
    let heldout = &series[split_point(series.len()) - model.window..];
    let mse = evaluate_mse(&model, heldout, 5).map_err(|e| e.to_string())?;
    check(mse[0] <= 0.01, format!("horizon-1 MSE {}", mse[0]))?;
    check(mse.windows(2).all(|w| w[1] >= w[0]), format!("MSE not non-decreasing: {mse:?}"))?;
    let shown: Vec<String> = mse.iter().map(|m| format!("{m:.2e}")).collect();
    Ok(format!("held-out MSE by horizon 1-5: {}", shown.join(", ")))
}

fn c9_end_to_end() -> Outcome {
    let exec = Execution::default();
    let scenario = Scenario::desk();
    check(
        scenario.cluster.machines.len() == 4
            && scenario.cluster.deployments.len() == 3
            && scenario.cluster.deployments.iter().filter(|d| d.optional_in_chain).count() == 1,
        "desk scenario shape",
    )?;
    let trace = parse_trace(data("data/alibaba_sample.csv")).map_err(|e| e.to_string())?;
    let w = build_workload(exec, &scenario, &trace, 0).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let trained = train_teacher(exec, &scenario, &w.load, 0, scenario.teacher.episodes).map_err(|e| e.to_string())?;
    let training = t0.elapsed();
    let fits = train_students(exec, &trained.buffers, &scenario.student, 0).map_err(|e| e.to_string())?;
    let controllers = Controllers::trained(&scenario, trained.agent, fits.into_iter().map(|f| f.student).collect())
        .map_err(|e| e.to_string())?;
    let seeds = [0, 1, 2, 3, 4];
    let runs = evaluate(
        exec,
        &scenario,
        &w.load,
        &controllers,
        &[Mode::Drpc, Mode::ThresholdBaseline],
        &seeds,
        2000,
    )
    .map_err(|e| e.to_string())?;
    let mut by: BTreeMap<(Mode, u64), (f64, f64)> = BTreeMap::new();
    for r in &runs {
        let m = compute_metrics(r.mode.name(), Some(r.seed), &[&r.outcome.log], scenario.sim.tick)
            .map_err(|e| e.to_string())?;
        by.insert((r.mode, r.seed), (m.failure_rate, m.mean_rt_ms));
    }
    let mut lines = Vec::new();
    let mut worse = Vec::new();
    for &s in &seeds {
        let (fd, rd) = by[&(Mode::Drpc, s)];
        let (fb, rb) = by[&(Mode::ThresholdBaseline, s)];
        lines.push(format!("seed {s}: fail {fd:.5} vs {fb:.5}, rt {rd:.1} vs {rb:.1} ms"));
        if !(fd < fb) {
            worse.push(s);
        }
    }
    let mean = |m: Mode| seeds.iter().map(|s| by[&(m, *s)].1).sum::<f64>() / seeds.len() as f64;
    let (rt_d, rt_b) = (mean(Mode::Drpc), mean(Mode::ThresholdBaseline));
    let reduction = 1.0 - rt_d / rt_b;
    for l in &lines {
        println!("      {l}");
    }
    check(worse.is_empty(), format!("failure rate not below baseline on seeds {worse:?}"))?;
    check(reduction >= 0.10, format!("mean response time reduction {:.1}%", 100.0 * reduction))?;
    Ok(format!(
        "failure rate below baseline on 5/5 seeds; mean RT {rt_d:.1} vs {rt_b:.1} ms ({:.1}% lower); teacher training {:.0} s",
        100.0 * reduction,
        training.as_secs_f64()
    ))
}

fn c10_percentiles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let samples: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.5..900.0)).collect();
    let mut log = SimLog::new(vec![]);
    for (t, chunk) in samples.chunks(97).enumerate() {
        log.push(SimLogRecord {
            tick: t as u64,
            chain_arrivals: vec![chunk.len() as u64],
            successes: chunk.len() as u64,
            failures: 0,
            chain_failures: vec![0],
            latencies: chunk.iter().map(|&ms| LatencySample { ms, count: 1 }).collect(),
            deployment_util: vec![],
            replicas: vec![],
            served: vec![],
            mean_rt_for_reward: 0.0,
            shortfall: 0,
            reward: RewardBreakdown {
                r_qos: 1.0,
                r_util: 1.0,
                reward: 1.0,
            },
        });
    }
    let m = compute_metrics("oracle", Some(0), &[&log], 1.0).map_err(|e| e.to_string())?;
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    for v in &m.percentiles {
        let rank = ((v.p / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        check(v.ms == sorted[rank - 1], format!("p{} = {} vs oracle {}", v.p, v.ms, sorted[rank - 1]))?;
    }
    let want = [50.0, 66.0, 75.0, 80.0, 90.0, 95.0, 99.0, 99.99];
    check(REPORT_PERCENTILES == want, "percentile set")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = write_report(
        &Report {
            config: serde_json::Value::Null,
            runs: vec![m.clone()],
            modes: vec![m],
        },
        dir.path(),
    )
    .map_err(|e| e.to_string())?;
    let table = std::fs::read_to_string(paths.percentiles).map_err(|e| e.to_string())?;
    let header = table.lines().next().unwrap_or_default();
    check(header == "mode,50,66,75,80,90,95,99,99.99", format!("percentile header `{header}`"))?;
    Ok("8 percentiles equal the full-sort oracle on 10,000 samples; table columns 50..99.99".into())
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["drpc"];
    argv.extend(args);
    let parsed = Cli::try_parse_from(&argv).map_err(|e| e.to_string())?;
    run(parsed.command).map_err(|e| format!("{args:?}: {e:#}"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in walk(dir) {
        let rel = e.strip_prefix(dir).unwrap().display().to_string();
        out.insert(rel, std::fs::read(&e).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for run_id in ["first", "second"] {
        let root = tmp.path().join(run_id);
        let p = |sub: &str| root.join(sub).display().to_string();
        let (models, sim, eval, pred, rep) = (p("models"), p("sim"), p("eval"), p("pred"), p("report"));
        cli(&["train-teacher", "--episodes", "3", "--seed", "5", "--out", &models])?;
        cli(&["train-student", "--seed", "5", "--out", &models])?;
        cli(&["simulate", "--mode", "drpc", "--models", &models, "--ticks", "200", "--seed", "5", "--out", &sim])?;
        cli(&["simulate", "--mode", "threshold-baseline", "--ticks", "200", "--out", &format!("{sim}-baseline")])?;
        cli(&["evaluate", "--models", &models, "--ticks", "150", "--runs", "2", "--out", &eval])?;
        cli(&["predict", "--episodes", "2", "--seed", "5", "--out", &pred])?;
        cli(&["report", &eval, &format!("{sim}/summary.json"), "--out", &rep])?;
        snaps.push(snapshot(&root));
    }
    check(!snaps[0].is_empty(), "no outputs")?;
    check(
        snaps[0].keys().eq(snaps[1].keys()),
        "different file sets between runs",
    )?;
    let differing: Vec<&String> = snaps[0].iter().filter(|(k, v)| snaps[1][*k] != **v).map(|(k, _)| k).collect();
    check(differing.is_empty(), format!("differing files: {differing:?}"))?;
    let data_files = snaps[0].keys().filter(|k| k.ends_with(".csv") || k.ends_with(".json")).count();
    Ok(format!(
        "7 commands twice: {} files ({data_files} CSV/JSON) byte-identical",
        snaps[0].len()
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

#[test]
fn acceptance() {
    let criteria = [
        Criterion { id: 1, name: "reward formulas", budget: Duration::from_secs(1), run: c1_reward_formulas },
        Criterion { id: 2, name: "gradient suite", budget: Duration::from_secs(30), run: c2_gradients },
        Criterion { id: 3, name: "TD3 mechanics", budget: Duration::from_secs(10), run: c3_td3_mechanics },
        Criterion { id: 4, name: "TD3 toy convergence", budget: Duration::from_secs(300), run: c4_td3_toy },
        Criterion { id: 5, name: "imitation learning", budget: Duration::from_secs(60), run: c5_imitation },
        Criterion { id: 6, name: "retraining notifier", budget: Duration::from_secs(1), run: c6_notifier },
        Criterion { id: 7, name: "scaling procedure", budget: Duration::from_secs(1), run: c7_scaling },
        Criterion { id: 8, name: "predictor quality", budget: Duration::from_secs(180), run: c8_predictor },
        Criterion { id: 9, name: "end-to-end vs threshold baseline", budget: Duration::from_secs(75 * 60), run: c9_end_to_end },
        Criterion { id: 10, name: "percentile reporting", budget: Duration::from_secs(5), run: c10_percentiles },
        Criterion { id: 11, name: "CLI determinism", budget: Duration::from_secs(600), run: c11_determinism },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        match &outcome {
            Ok(detail) => println!("PASS {:>2} {}: {detail} [{:.2} s]", c.id, c.name, took.as_secs_f64()),
            Err(why) => {
                println!("FAIL {:>2} {}: {why} [{:.2} s]", c.id, c.name, took.as_secs_f64());
                failed.push(c.id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
