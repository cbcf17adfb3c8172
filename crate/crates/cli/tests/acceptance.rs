//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`); criterion 8
//! trains six agents and dominates the runtime.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context as _};
use nalgebra::DMatrix;
use rand::Rng;
use serde_json::Value;

use kscontrol::actuation::{Actuator, JetArray, JetConfig};
use kscontrol::audit::{
    band_limited, convergence_order, energy_balance_error, forcing_equivariance, step_equivariance, symmetry_suite,
    trajectory_equivariance,
};
use kscontrol::env::{ControlEnv, EpisodeConfig, Mode, TrainConfig};
use kscontrol::equilibria::{
    distance_modulo_translation, distinct_equilibria, recurrence_seeds, NewtonConfig, SteadyOperator,
};
use kscontrol::io::read_table;
use kscontrol::lqr::{
    care_residual, pbh_controllability, pbh_stabilizability, solve_care, LinearModel, CARE_TOLERANCE,
};
use kscontrol::rl::{DdpgAgent, DdpgConfig, Experience, Matrix, Mlp, ReplayBuffer};
use kscontrol::rng::{stream_rng, Stream};
use kscontrol::spectral::{smooth_random_state, GridConfig, RealField, SpectralField, Stepper};

use kscontrol_cli::commands::{self, boundary_safe_states, frozen_actor, Context};
use kscontrol_cli::config::RunConfig;

type Check = anyhow::Result<(bool, String)>;

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, id: u32, name: &str, budget: Duration, check: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        let in_time = elapsed <= budget;
        let pass = ok && in_time;
        if !pass {
            self.failures += 1;
        }
        let timing = format!("{:.1}s of {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64());
        let timing = if in_time {
            timing
        } else {
            format!("{timing}, over budget")
        };
        println!(
            "criterion {id} {}: {name}: {detail} ({timing})",
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn grid() -> GridConfig {
    GridConfig::default()
}

fn equidistant(grid: &GridConfig) -> anyhow::Result<Actuator> {
    Ok(Actuator::new(
        JetArray::equidistant(&JetConfig::default(), grid.length),
        grid,
    )?)
}

fn symmetry_operators() -> Check {
    let mut rng = stream_rng(101, Stream::Evaluation);
    let audit = symmetry_suite(&mut rng, 100, grid().n_modes());
    let err = audit.max_error();
    Ok((
        audit.states >= 100 && err <= 1e-10,
        format!("{} states, max error {err:.2e}", audit.states),
    ))
}

fn wrapped_policy_equivariance() -> Check {
    let cfg = RunConfig::default();
    let grid = cfg.grid;
    let stepper = Stepper::new(grid)?;
    let fourier = stepper.fourier();
    let act = equidistant(&grid)?;
    let actor = frozen_actor(&cfg);
    let states: Vec<RealField> = boundary_safe_states(&cfg, 20)?
        .iter()
        .map(|s| fourier.from_spectral(s))
        .collect();
    let forcing = forcing_equivariance(&actor, &act, &stepper, &states)?;
    let episode = EpisodeConfig {
        mode: Mode::Reduced,
        obs_noise: 0.0,
        act_noise: 0.0,
        duration: 100.0,
        ..EpisodeConfig::default()
    };
    let mut env = ControlEnv::new(grid, &cfg.jets, episode)?;
    let trajectory = trajectory_equivariance(&mut env, &actor, &states[0])?;
    Ok((
        forcing <= 1e-8 && trajectory <= 1e-6,
        format!("forcing {forcing:.2e} over 20 states x 8 elements, trajectory L2 {trajectory:.2e}"),
    ))
}

fn attractor_state(seed: u64) -> anyhow::Result<SpectralField> {
    let grid = grid();
    let stepper = Stepper::new(grid)?;
    let mut rng = stream_rng(seed, Stream::InitialConditions);
    let s = smooth_random_state(&grid, &mut rng, 0.5, 4);
    Ok(stepper.advance_unforced(&s, grid.steps_in(200.0)?)?)
}

fn solver_physics() -> Check {
    let grid = grid();
    let stepper = Stepper::new(grid)?;
    let mut states = Vec::new();
    let mut s = attractor_state(301)?;
    for _ in 0..10 {
        s = stepper.advance_unforced(&s, grid.steps_in(7.0)?)?;
        states.push(band_limited(&s));
    }
    let thetas = [0.1, 0.5 * PI, 1.234, -2.9, PI];
    let equivariance = step_equivariance(&stepper, &states, &thetas)?;
    let u0 = attractor_state(302)?;
    let coarse = energy_balance_error(&grid, &u0, 10.0)?;
    let fine = energy_balance_error(
        &GridConfig {
            dt: grid.dt / 2.0,
            ..grid
        },
        &u0,
        10.0,
    )?;
    let order = convergence_order(&grid, &u0, 5.0)?;
    Ok((
        equivariance <= 1e-10 && coarse <= 0.02 && fine < coarse && order >= 2.0,
        format!(
            "step equivariance {equivariance:.2e}, energy balance {:.3}% -> {:.3}% at dt/2, order {order:.2}",
            100.0 * coarse,
            100.0 * fine
        ),
    ))
}

fn trivial_spectrum() -> Check {
    let op = SteadyOperator::new(grid())?;
    let eigs = op.leading_eigenvalues(&RealField::zeros(grid().n_points), 6);
    let expected = [0.21982, 0.21982, 0.19520, 0.19520, 0.07491, 0.07491];
    let worst = eigs
        .iter()
        .zip(&expected)
        .map(|(e, x)| (e.re - x).abs().max(e.im.abs()))
        .fold(0.0, f64::max);
    let shown: Vec<String> = eigs.iter().map(|e| format!("{:.5}", e.re)).collect();
    Ok((
        eigs.len() == 6 && worst <= 1e-4,
        format!("[{}], max deviation {worst:.1e}", shown.join(", ")),
    ))
}

fn equilibrium_machinery() -> Check {
    let grid = grid();
    let op = SteadyOperator::new(grid)?;
    let newton = NewtonConfig::default();
    let seeds = recurrence_seeds(&op, &attractor_state(2)?, 1000.0, 0.5, 40)?;
    let eq = distinct_equilibria(&op, &seeds, &newton)
        .into_iter()
        .next()
        .context("no recurrence seed converged")?;
    let residual = op.residual(&eq.u, &eq.f)?.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let fourier = op.stepper().fourier();
    let end = op
        .stepper()
        .advance_unforced(&fourier.to_spectral(&eq.u)?, grid.steps_in(100.0)?)?;
    let drift = (fourier
        .from_spectral(&end)
        .sub(&eq.u)
        .0
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        * grid.dx())
    .sqrt();
    let nontrivial = eq.u.max_abs() > 0.1;
    // Small jet forcing applied to the solution, then continued back to zero.
    let f = equidistant(&grid)?.forcing_field(&[0.02, -0.01, 0.015, -0.025])?;
    let aligned = op.align_to_forcing(&eq.u, &f)?.context("no phase admits the forcing")?;
    let forced = op.newton(&aligned, &f, &newton)?;
    let run = op.continue_forcing(&forced, 10, &newton)?;
    let back = distance_modulo_translation(&op, &run.terminal().u, &eq.u)?;
    Ok((
        nontrivial && residual <= 1e-10 && eq.max_real_eig() > 0.0 && drift <= 1e-6 && back <= 1e-6,
        format!(
            "residual {residual:.1e}, leading Re {:.4}, drift {drift:.1e}, continuation return {back:.1e}",
            eq.max_real_eig()
        ),
    ))
}

fn pbh_and_care() -> Check {
    let grid = grid();
    let op = SteadyOperator::new(grid)?;
    let zero = RealField::zeros(grid.n_points);
    let model = LinearModel::linearize(&op, &equidistant(&grid)?, &zero, &zero)?;
    let symmetric_fails =
        !pbh_controllability(&model.a, &model.b)?.pass && !pbh_stabilizability(&model.a, &model.b)?.pass;
    let mut rng = stream_rng(601, Stream::Evaluation);
    let mut passes = 0;
    for _ in 0..10 {
        let jets = JetArray {
            positions: (0..4).map(|_| rng.random_range(0.0..grid.length)).collect(),
            ..JetArray::equidistant(&JetConfig::default(), grid.length)
        };
        let m = LinearModel::linearize(&op, &Actuator::new(jets, &grid)?, &zero, &zero)?;
        if pbh_controllability(&m.a, &m.b)?.pass && pbh_stabilizability(&m.a, &m.b)?.pass {
            passes += 1;
        }
    }
    let scalar = |a: f64| -> anyhow::Result<f64> {
        let one = DMatrix::from_element(1, 1, 1.0);
        Ok(solve_care(&DMatrix::from_element(1, 1, a), &one, &one, &one)?.p[(0, 0)])
    };
    let scalar_err = (scalar(-1.0)? - (2f64.sqrt() - 1.0))
        .abs()
        .max((scalar(0.0)? - 1.0).abs());
    let mut worst_residual: f64 = 0.0;
    for _ in 0..20 {
        let a = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
        let (q, r) = (DMatrix::identity(8, 8), DMatrix::identity(2, 2));
        let gain = solve_care(&a, &b, &q, &r)?;
        worst_residual = worst_residual.max(care_residual(&a, &b, &q, &r, &gain.p)?);
    }
    Ok((
        symmetric_fails && passes >= 9 && scalar_err <= 1e-10 && worst_residual <= CARE_TOLERANCE,
        format!(
            "equidistant jets fail both tests: {symmetric_fails}, random placements pass {passes}/10, \
             scalar error {scalar_err:.1e}, worst 8x8 residual {worst_residual:.1e}"
        ),
    ))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn random_experiences<R: Rng>(rng: &mut R, count: usize, obs: usize, act: usize) -> Vec<Experience> {
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    (0..count)
        .map(|_| Experience {
            s: v(obs),
            a: v(act),
            r: v(1)[0],
            s_next: v(obs),
        })
        .collect()
}

fn small_config() -> DdpgConfig {
    DdpgConfig {
        hidden: vec![16, 12],
        gamma: 0.95,
        ..DdpgConfig::default()
    }
}

/// Largest relative mismatch between `grads` and central differences of
/// `objective` over every parameter of `net(agent)`.
fn gradient_check(
    agent: &mut DdpgAgent,
    grads: &[f64],
    net: fn(&mut DdpgAgent) -> &mut Mlp,
    objective: impl Fn(&DdpgAgent) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (p, g) in grads.iter().enumerate() {
        let orig = net(agent).params()[p];
        net(agent).params_mut()[p] = orig + h;
        let plus = objective(agent);
        net(agent).params_mut()[p] = orig - h;
        let minus = objective(agent);
        net(agent).params_mut()[p] = orig;
        worst = worst.max(relative((plus - minus) / (2.0 * h), *g));
    }
    worst
}

fn rl_numerics() -> Check {
    let mut rng = stream_rng(701, Stream::NetworkInit);
    let mut agent = DdpgAgent::new(
        5,
        3,
        DdpgConfig {
            tau: 0.5,
            ..small_config()
        },
        &mut rng,
    )?;
    let data = random_experiences(&mut rng, 8, 5, 3);
    let batch: Vec<&Experience> = data.iter().collect();
    // Separate the targets from the live networks before checking gradients.
    agent.update(&batch)?;
    let (_, critic_grads) = agent.critic_loss_and_grad(&batch)?;
    let critic_err = gradient_check(&mut agent, &critic_grads, DdpgAgent::critic_mut, |a| {
        a.critic_loss_and_grad(&batch).unwrap().0
    });
    let (_, actor_grads) = agent.actor_objective_and_grad(&batch)?;
    let actor_err = gradient_check(&mut agent, &actor_grads, DdpgAgent::actor_mut, |a| {
        a.actor_objective_and_grad(&batch).unwrap().0
    });
    // Input gradient of the critic, the action part of which drives the actor.
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let critic = agent.critic();
    let cache = critic.forward_cached(&Matrix::from_rows([x.as_slice()], 8)?)?;
    let one = Matrix {
        rows: 1,
        cols: 1,
        data: vec![1.0],
    };
    let g = critic.backward(&cache, &one, None, true).context("input gradient")?;
    let mut input_err: f64 = 0.0;
    for i in 0..8 {
        let h = 1e-5;
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        let fd = (critic.forward(&xp)?[0] - critic.forward(&xm)?[0]) / (2.0 * h);
        input_err = input_err.max(relative(fd, g.data[i]));
    }
    let gradients = critic_err.max(actor_err).max(input_err);

    // Soft update against the blend computed here.
    let tau = agent.config.tau;
    let expected: Vec<f64> = agent
        .target_actor()
        .params()
        .iter()
        .zip(agent.actor().params())
        .map(|(t, s)| tau * s + (1.0 - tau) * t)
        .collect();
    agent.soft_update();
    let soft_exact = agent.target_actor().params() == expected.as_slice();

    let mut buffer = ReplayBuffer::new(3);
    for tag in 1..=5 {
        buffer.push(Experience {
            s: vec![],
            a: vec![],
            r: f64::from(tag),
            s_next: vec![],
        });
    }
    let held: Vec<f64> = buffer.iter().map(|e| e.r).collect();
    let ring_exact = held == [4.0, 5.0, 3.0] && buffer.len() == 3;

    let train = || -> anyhow::Result<DdpgAgent> {
        let mut rng = stream_rng(702, Stream::NetworkInit);
        let mut agent = DdpgAgent::new(5, 3, small_config(), &mut rng)?;
        let mut buffer = ReplayBuffer::new(64);
        random_experiences(&mut rng, 40, 5, 3)
            .into_iter()
            .for_each(|e| buffer.push(e));
        let mut sampler = stream_rng(702, Stream::Sampling);
        for _ in 0..100 {
            let batch = buffer.sample(&mut sampler, 16)?;
            agent.update(&batch)?;
        }
        Ok(agent)
    };
    let deterministic = train()? == train()?;
    Ok((
        gradients <= 1e-5 && soft_exact && ring_exact && deterministic,
        format!(
            "gradient error {gradients:.1e}, soft update exact {soft_exact}, ring exact {ring_exact}, \
             100-update repeat identical {deterministic}"
        ),
    ))
}

const SEEDS: [u64; 3] = [0, 1, 2];
const EPISODES: usize = 300;

struct TrainedMode {
    final_means: Vec<f64>,
}

fn training_config(seed: u64, mode: Mode, out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        out: out.to_path_buf(),
        train: TrainConfig {
            episodes: EPISODES,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.episode.mode = mode;
    cfg
}

fn train_mode(mode: Mode, root: &Path) -> anyhow::Result<TrainedMode> {
    let mut final_means = Vec::new();
    for seed in SEEDS {
        let cfg = training_config(seed, mode, &root.join(format!("{mode}_{seed}")));
        let start = Instant::now();
        let ctx = Context::new(cfg)?;
        let manifest = commands::train(&ctx)?;
        let mean = manifest["summary"]["final_mean_reward"]
            .as_f64()
            .context("final mean in manifest")?;
        eprintln!(
            "  {mode} seed {seed}: final-50 mean reward {mean:.2} ({:.0}s)",
            start.elapsed().as_secs_f64()
        );
        final_means.push(mean);
    }
    Ok(TrainedMode { final_means })
}

fn variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn training_trend(root: &Path, reduced_out: &mut Option<(u64, f64)>) -> Check {
    let naive = train_mode(Mode::Naive, root)?;
    let reduced = train_mode(Mode::Reduced, root)?;
    let wins = naive
        .final_means
        .iter()
        .zip(&reduced.final_means)
        .filter(|(n, r)| r > n)
        .count();
    let (var_n, var_r) = (variance(&naive.final_means), variance(&reduced.final_means));
    let best = SEEDS
        .iter()
        .zip(&reduced.final_means)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(s, m)| (*s, *m));
    *reduced_out = best;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(", ");
    Ok((
        wins >= 2 && var_r < var_n,
        format!(
            "final-50 reward naive [{}] reduced [{}], reduced wins {wins}/3, variance {var_n:.1} -> {var_r:.1}",
            fmt(&naive.final_means),
            fmt(&reduced.final_means)
        ),
    ))
}

/// Every no-control rollout stays finite and keeps fluctuating over its
/// second half, rather than settling.
fn chaotic_and_bounded(table: &Path) -> anyhow::Result<(bool, f64)> {
    let (header, rows) = read_table(table)?;
    let n_ics = header.len() - 2;
    ensure!(rows.len() >= 2, "empty evaluation table");
    let tail = &rows[rows.len() / 2..];
    let mut smallest_cv = f64::INFINITY;
    let mut finite = true;
    for ic in 1..=n_ics {
        let series: Vec<f64> = tail.iter().map(|r| r[ic]).collect();
        finite &= series.iter().all(|v| v.is_finite());
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let sd = variance(&series).sqrt();
        smallest_cv = smallest_cv.min(sd / mean.abs());
    }
    Ok((finite && smallest_cv > 0.05, smallest_cv))
}

fn evaluation(root: &Path, reduced: Option<(u64, f64)>) -> Check {
    let (seed, _) = reduced.context("criterion 8 produced no reduced-mode checkpoint")?;
    let checkpoint = root.join(format!("{}_{seed}", Mode::Reduced)).join("checkpoint.json");
    let mut cfg = training_config(seed, Mode::Reduced, &root.join("evaluation"));
    cfg.evaluate.n_ics = 20;
    cfg.evaluate.duration = 250.0;
    cfg.evaluate.lengths = vec![22.0];
    cfg.evaluate.noise_levels = vec![0.0, 0.1];
    let ctx = Context::new(cfg)?;
    let manifest = commands::evaluate(&ctx, Some(&checkpoint))?;
    let results = manifest["summary"]["results"]
        .as_array()
        .context("evaluation results")?;
    let cost = |control: &str, noise: Option<f64>| -> anyhow::Result<(f64, u64)> {
        let r = results
            .iter()
            .find(|r| r["control"] == control && r.get("noise").and_then(Value::as_f64) == noise)
            .with_context(|| format!("no result for {control} {noise:?}"))?;
        Ok((
            r["mean_cost"].as_f64().context("mean cost")?,
            r["diverged"].as_u64().unwrap_or(0),
        ))
    };
    let (none, none_div) = cost("none", None)?;
    let (clean, clean_div) = cost("reduced", Some(0.0))?;
    let (noisy, noisy_div) = cost("reduced", Some(0.1))?;
    let (chaotic, cv) = chaotic_and_bounded(&ctx.path("eval_L22_none.csv"))?;
    Ok((
        chaotic && none_div + clean_div + noisy_div == 0 && clean < none && noisy < none,
        format!(
            "mean D+Pf no control {none:.3} (smallest fluctuation {:.0}%), agent seed {seed} {clean:.3}, \
             with noise 0.1 {noisy:.3}",
            100.0 * cv
        ),
    ))
}

fn main() {
    let root = tempfile::tempdir().expect("scratch directory");
    let mut report = Report { failures: 0 };
    let min = |m: u64| Duration::from_secs(60 * m);
    report.run(1, "symmetry operators", Duration::from_secs(1), symmetry_operators);
    report.run(2, "wrapped policy equivariance", min(2), wrapped_policy_equivariance);
    report.run(3, "solver physics", min(1), solver_physics);
    report.run(4, "trivial state spectrum", Duration::from_secs(1), trivial_spectrum);
    report.run(5, "equilibrium machinery", min(5), equilibrium_machinery);
    report.run(6, "PBH and CARE", min(1), pbh_and_care);
    report.run(7, "RL numerics", min(1), rl_numerics);
    let mut reduced = None;
    report.run(8, "training trend", min(240), || {
        training_trend(root.path(), &mut reduced)
    });
    report.run(9, "evaluation harness", min(30), || evaluation(root.path(), reduced));
    if report.failures > 0 {
        println!("{} criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
