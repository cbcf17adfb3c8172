//! Command implementations. Each returns a JSON summary that is also
//! written into the run directory as `<command>_manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde_json::{json, Value};

use kscontrol::actuation::{Actuator, JetArray};
use kscontrol::audit::{
    band_limited, forcing_equivariance, reduction_margin, step_equivariance, symmetry_suite, trajectory_equivariance,
};
use kscontrol::env::{
    evaluate as run_ensemble, rollout, ControlEnv, EpisodeConfig, EpisodeLog, IcLibrary, Mode, Trainer,
};
use kscontrol::equilibria::{
    distance_modulo_translation, distinct_equilibria, harmonic_seeds, Equilibrium, SteadyOperator,
};
use kscontrol::io::{
    continuation_rows, write_continuation, write_episode_log, write_json, write_table, write_trajectory, TrajectoryMeta,
};
use kscontrol::lqr::{
    closed_loop_sim, pbh_controllability, pbh_stabilizability, solve_care, solve_care_partial, ClosedLoopRun,
    LinearModel, LqrGain,
};
use kscontrol::rl::{Activation, Checkpoint, Mlp};
use kscontrol::rng::{stream_rng, Stream};
use kscontrol::spectral::{smooth_random_state, Fourier, GridConfig, RealField, SpectralField, Stepper};
use kscontrol::symmetry::FourierStateVector;

use crate::config::{InitialCondition, RunConfig};
use crate::{ConfigError, NumericError};

/// Resolved configuration plus its hash and output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: RunConfig) -> anyhow::Result<Self> {
        fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        Ok(Self { hash: cfg.hash(), cfg })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn meta(&self, grid: &GridConfig) -> TrajectoryMeta {
        TrajectoryMeta::new(grid, self.cfg.seed, Some(self.hash.clone()))
    }

    fn actuator(&self, grid: &GridConfig) -> anyhow::Result<Actuator> {
        Ok(Actuator::new(JetArray::equidistant(&self.cfg.jets, grid.length), grid)?)
    }

    /// Write `<command>_manifest.json` and return the summary.
    fn finish(&self, command: &str, summary: Value) -> anyhow::Result<Value> {
        let manifest = json!({
            "command": command,
            "seed": self.cfg.seed,
            "config_hash": self.hash,
            "config": self.cfg,
            "summary": summary,
        });
        write_json(&self.path(&format!("{command}_manifest.json")), &manifest)?;
        Ok(manifest)
    }
}

fn lowest_equilibrium(op: &SteadyOperator, ctx: &Context) -> anyhow::Result<Equilibrium> {
    let seeds = harmonic_seeds(op.grid(), 3, &[0.5, 1.0, 1.5, 2.0, 3.0]);
    distinct_equilibria(op, &seeds, &ctx.cfg.newton)
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!(NumericError("no equilibrium found from harmonic seeds".into())))
}

/// Zero-mean version of `f`, with the removed mean.
fn remove_mean(f: &RealField) -> (RealField, f64) {
    let mean = f.mean();
    (RealField(f.0.iter().map(|v| v - mean).collect()), mean)
}

fn diagnostics_row(fourier: &Fourier, t: f64, s: &SpectralField, forcing: &SpectralField) -> Vec<f64> {
    vec![
        t,
        fourier.dissipation_spectral(s),
        fourier.power_input_spectral(s, forcing),
        fourier.energy_spectral(s),
    ]
}

pub fn simulate(ctx: &Context) -> anyhow::Result<Value> {
    let cfg = &ctx.cfg;
    let grid = cfg.grid;
    let stepper = Stepper::new(grid)?;
    let fourier = stepper.fourier();
    let forcing = if cfg.simulate.jet_amplitudes.is_empty() {
        RealField::zeros(grid.n_points)
    } else {
        ctx.actuator(&grid)?.forcing_field(&cfg.simulate.jet_amplitudes)?
    };
    let fh = fourier.to_spectral(&forcing)?;
    let mut state = match cfg.simulate.initial {
        InitialCondition::Zero => SpectralField::zeros(grid.n_modes()),
        InitialCondition::Random => {
            let mut rng = stream_rng(cfg.seed, Stream::InitialConditions);
            let s = smooth_random_state(&grid, &mut rng, cfg.library.initial_rms, 4);
            stepper.advance_unforced(&s, grid.steps_in(cfg.simulate.transient)?)?
        }
        InitialCondition::Equilibrium => {
            let op = SteadyOperator::new(grid)?;
            fourier.to_spectral(&lowest_equilibrium(&op, ctx)?.u)?
        }
    };
    let stride = grid.steps_in(cfg.simulate.sample_every)?;
    let steps = grid.steps_in(cfg.simulate.duration)?;
    let mut times = vec![0.0];
    let mut states = vec![fourier.from_spectral(&state)];
    let mut diag = vec![diagnostics_row(fourier, 0.0, &state, &fh)];
    let mut peak = states[0].max_abs();
    for i in 1..=steps {
        state = stepper
            .step_spectral(&state, &fh)
            .map_err(|e| anyhow!(e))
            .with_context(|| format!("step {i}"))?;
        if i % stride == 0 {
            let t = i as f64 * grid.dt;
            let u = fourier.from_spectral(&state);
            peak = peak.max(u.max_abs());
            times.push(t);
            states.push(u);
            diag.push(diagnostics_row(fourier, t, &state, &fh));
        }
    }
    write_trajectory(&ctx.path("trajectory.csv"), &times, &states, &ctx.meta(&grid))?;
    let header: Vec<String> = ["t", "D", "Pf", "E"].iter().map(|s| s.to_string()).collect();
    write_table(&ctx.path("diagnostics.csv"), &header, &diag)?;
    let mean = |k: usize| diag.iter().map(|r| r[k]).sum::<f64>() / diag.len() as f64;
    ctx.finish(
        "simulate",
        json!({
            "samples": times.len(),
            "max_abs": peak,
            "mean_dissipation": mean(1),
            "mean_power_input": mean(2),
        }),
    )
}

fn checkpoint_meta(ctx: &Context, mode: Mode, episode: usize, grid: &GridConfig) -> serde_json::Map<String, Value> {
    let mut meta = serde_json::Map::new();
    meta.insert("mode".into(), json!(mode.to_string()));
    meta.insert("seed".into(), json!(ctx.cfg.seed));
    meta.insert("config_hash".into(), json!(ctx.hash));
    meta.insert("episode".into(), json!(episode));
    meta.insert("length".into(), json!(grid.length));
    meta.insert("n_points".into(), json!(grid.n_points));
    meta
}

/// Per-episode training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub reward: f64,
    pub mean_cost: f64,
    pub beta: f64,
    pub critic_loss: f64,
    pub updates: usize,
    pub diverged: bool,
}

/// Train for the configured number of episodes, calling `on_episode` after
/// each one. Returns the trainer and the per-episode summaries.
pub fn train_agent(
    cfg: &RunConfig,
    mut on_episode: impl FnMut(usize, &EpisodeLog, &Trainer) -> anyhow::Result<()>,
) -> anyhow::Result<(Trainer, Vec<EpisodeSummary>)> {
    let library = IcLibrary::generate(&cfg.grid, &cfg.library, cfg.seed)?;
    let env = ControlEnv::new(cfg.grid, &cfg.jets, cfg.episode)?;
    let mut trainer = Trainer::new(env, &cfg.train, cfg.seed)?;
    let mut summaries = Vec::with_capacity(cfg.train.episodes);
    for ep in 0..cfg.train.episodes {
        let log = trainer
            .train_episode(&library)
            .map_err(|e| anyhow!(e))
            .with_context(|| format!("episode {ep}"))?;
        summaries.push(EpisodeSummary {
            reward: log.total_reward(),
            mean_cost: log.mean_cost(),
            beta: log.beta,
            critic_loss: log.critic_loss.unwrap_or(f64::NAN),
            updates: log.updates,
            diverged: log.diverged.is_some(),
        });
        on_episode(ep, &log, &trainer)?;
    }
    Ok((trainer, summaries))
}

pub fn train(ctx: &Context) -> anyhow::Result<Value> {
    let cfg = &ctx.cfg;
    let episodes = cfg.train.episodes;
    let mode = cfg.episode.mode;
    let n_jets = cfg.jets.n_jets;
    let log_dir = ctx.path("episodes");
    fs::create_dir_all(&log_dir)?;
    let every = (episodes / 10).max(1);
    let (trainer, summaries) = train_agent(cfg, |ep, log, trainer| {
        if ep == 0 || (ep + 1) % every == 0 || ep + 1 == episodes {
            write_episode_log(&log_dir.join(format!("episode_{ep:05}.csv")), log, n_jets)?;
            let mut ck = Checkpoint::new(trainer.agent.clone());
            ck.rng = trainer.rng_states();
            ck.meta = checkpoint_meta(ctx, mode, ep + 1, &cfg.grid);
            ck.save(&ctx.path("checkpoint.json"))?;
        }
        Ok(())
    })?;
    let header: Vec<String> = [
        "episode",
        "reward",
        "mean_cost",
        "beta",
        "critic_loss",
        "updates",
        "diverged",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<f64>> = summaries
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                i as f64,
                s.reward,
                s.mean_cost,
                s.beta,
                s.critic_loss,
                s.updates as f64,
                f64::from(u8::from(s.diverged)),
            ]
        })
        .collect();
    write_table(&ctx.path("training_curve.csv"), &header, &rows)?;
    let tail = &summaries[summaries.len().saturating_sub(50)..];
    let final_mean = tail.iter().map(|s| s.reward).sum::<f64>() / tail.len().max(1) as f64;
    ctx.finish(
        "train",
        json!({
            "mode": mode.to_string(),
            "episodes": episodes,
            "diverged_episodes": trainer.diverged_episodes,
            "final_mean_reward": final_mean,
        }),
    )
}

/// Actor and training mode stored in a checkpoint.
fn load_actor(path: &Path, cfg: &RunConfig) -> anyhow::Result<(Mlp, Mode)> {
    let ck = Checkpoint::load(path, cfg.grid.n_points, cfg.jets.n_jets)
        .map_err(|e| anyhow!(e))
        .with_context(|| format!("loading {}", path.display()))?;
    let mode = match ck.meta.get("mode").and_then(Value::as_str) {
        Some(m) => m.parse::<Mode>()?,
        None => cfg.episode.mode,
    };
    Ok((ck.agent.actor().clone(), mode))
}

/// Offset of the evaluation library seed, so evaluation starts are not the
/// snapshots the agent trained on.
pub const EVALUATION_LIBRARY_OFFSET: u64 = 1_000_003;

/// `n` initial conditions drawn without replacement from a held-out
/// attractor library of `grid`.
pub fn evaluation_ics(cfg: &RunConfig, grid: &GridConfig, n: usize) -> anyhow::Result<Vec<SpectralField>> {
    let library = IcLibrary::generate(grid, &cfg.library, cfg.seed.wrapping_add(EVALUATION_LIBRARY_OFFSET))?;
    if library.len() < n {
        bail!(ConfigError(format!(
            "library holds {} states, {} requested",
            library.len(),
            n
        )));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Evaluation);
    Ok(sample(&mut rng, library.len(), n)
        .into_iter()
        .map(|i| library.states[i].clone())
        .collect())
}

/// Per-window `D + P_f` of every rollout, with the ensemble mean appended.
fn cost_table(logs: &[EpisodeLog]) -> (Vec<String>, Vec<Vec<f64>>) {
    let header = std::iter::once("t".to_string())
        .chain((0..logs.len()).map(|i| format!("ic{i}")))
        .chain(std::iter::once("mean".to_string()))
        .collect();
    let windows = logs.iter().map(|l| l.steps.len()).min().unwrap_or(0);
    let rows = (0..windows)
        .map(|w| {
            let costs: Vec<f64> = logs.iter().map(|l| l.steps[w].d + l.steps[w].pf).collect();
            let mean = costs.iter().sum::<f64>() / costs.len() as f64;
            std::iter::once(logs[0].steps[w].t)
                .chain(costs)
                .chain(std::iter::once(mean))
                .collect()
        })
        .collect();
    (header, rows)
}

/// Time- and ensemble-mean of `D + P_f`.
pub fn ensemble_mean_cost(logs: &[EpisodeLog]) -> f64 {
    logs.iter().map(EpisodeLog::mean_cost).sum::<f64>() / logs.len() as f64
}

pub fn evaluate(ctx: &Context, checkpoint: Option<&Path>) -> anyhow::Result<Value> {
    let cfg = &ctx.cfg;
    let agent = checkpoint.map(|p| load_actor(p, cfg)).transpose()?;
    let mut results = Vec::new();
    for &length in &cfg.evaluate.lengths {
        let grid = GridConfig { length, ..cfg.grid };
        let ics = evaluation_ics(cfg, &grid, cfg.evaluate.n_ics)?;
        let episode = EpisodeConfig {
            duration: cfg.evaluate.duration,
            ..cfg.episode
        };
        let env = ControlEnv::new(grid, &cfg.jets, episode)?;
        let logs = run_ensemble(&env, None, &ics, cfg.seed)?;
        let (header, rows) = cost_table(&logs);
        write_table(&ctx.path(&format!("eval_L{length}_none.csv")), &header, &rows)?;
        results.push(json!({
            "length": length,
            "control": "none",
            "mean_cost": ensemble_mean_cost(&logs),
            "diverged": logs.iter().filter(|l| l.diverged.is_some()).count(),
        }));
        let Some((actor, mode)) = &agent else { continue };
        for &noise in &cfg.evaluate.noise_levels {
            let env = ControlEnv::new(
                grid,
                &cfg.jets,
                EpisodeConfig {
                    obs_noise: noise,
                    act_noise: noise,
                    mode: *mode,
                    ..episode
                },
            )?;
            let logs = run_ensemble(&env, Some(actor), &ics, cfg.seed)?;
            let (header, rows) = cost_table(&logs);
            write_table(
                &ctx.path(&format!("eval_L{length}_agent_noise{noise}.csv")),
                &header,
                &rows,
            )?;
            results.push(json!({
                "length": length,
                "control": mode.to_string(),
                "noise": noise,
                "mean_cost": ensemble_mean_cost(&logs),
                "diverged": logs.iter().filter(|l| l.diverged.is_some()).count(),
            }));
        }
    }
    ctx.finish("evaluate", json!({ "results": results }))
}

/// Long-time mean jet forcing of an agent and the state it settles into,
/// from one noise-free rollout.
pub fn agent_mean_forcing(cfg: &RunConfig, actor: &Mlp, mode: Mode) -> anyhow::Result<(RealField, RealField)> {
    let grid = cfg.grid;
    let env_cfg = EpisodeConfig {
        duration: cfg.evaluate.duration,
        obs_noise: 0.0,
        act_noise: 0.0,
        mode,
        ..cfg.episode
    };
    let mut env = ControlEnv::new(grid, &cfg.jets, env_cfg)?;
    let u0 = evaluation_ics(cfg, &grid, 1)?.remove(0);
    let mut rng = stream_rng(cfg.seed, Stream::Evaluation);
    let log = rollout(&mut env, Some(actor), &u0, &mut rng, false)?;
    if let Some(time) = log.diverged {
        bail!(kscontrol::Error::Diverged {
            time,
            max_abs: f64::INFINITY
        });
    }
    // Second half of the run, once the transient has passed.
    let tail = &log.steps[log.steps.len() / 2..];
    let n = cfg.jets.n_jets;
    let mean_action: Vec<f64> = (0..n)
        .map(|j| tail.iter().map(|s| s.action[j]).sum::<f64>() / tail.len() as f64)
        .collect();
    let forcing = env.actuator().forcing_field(&mean_action)?;
    Ok((forcing, env.field()))
}

/// Forced equilibrium: from an agent's mean forcing if a checkpoint is
/// given, otherwise from the configured jets applied to the
/// lowest-dissipation equilibrium. Returns the equilibrium, the unforced
/// solution it was continued from (if any) and the removed forcing mean.
fn forced_equilibrium(
    ctx: &Context,
    op: &SteadyOperator,
    checkpoint: Option<&Path>,
    amplitudes: &[f64],
) -> anyhow::Result<(Equilibrium, Option<Equilibrium>, f64)> {
    let cfg = &ctx.cfg;
    if let Some(path) = checkpoint {
        let (actor, mode) = load_actor(path, cfg)?;
        let (forcing, settled) = agent_mean_forcing(cfg, &actor, mode)?;
        let (f, removed) = remove_mean(&forcing);
        let eq = op
            .newton(&settled, &f, &cfg.newton)
            .map_err(|e| anyhow!(e))
            .context("newton from the controlled state")?;
        return Ok((eq, None, removed));
    }
    let e1 = lowest_equilibrium(op, ctx)?;
    let (f, removed) = remove_mean(&ctx.actuator(op.grid())?.forcing_field(amplitudes)?);
    let aligned = op
        .align_to_forcing(&e1.u, &f)?
        .ok_or_else(|| anyhow!(NumericError("no phase of the equilibrium admits this forcing".into())))?;
    let eq = op.newton(&aligned, &f, &cfg.newton)?;
    Ok((eq, Some(e1), removed))
}

fn dump_solutions(ctx: &Context, name: &str, params: &[f64], solutions: &[Equilibrium]) -> anyhow::Result<()> {
    let grid = solutions[0].grid;
    let states: Vec<RealField> = solutions.iter().map(|e| e.u.clone()).collect();
    write_trajectory(&ctx.path(name), params, &states, &ctx.meta(&grid))?;
    Ok(())
}

pub fn continue_forcing(ctx: &Context, checkpoint: Option<&Path>) -> anyhow::Result<Value> {
    let cfg = &ctx.cfg;
    let op = SteadyOperator::new(cfg.grid)?;
    let (forced, start, removed_mean) = forced_equilibrium(ctx, &op, checkpoint, &cfg.continuation.jet_amplitudes)?;
    let run = op.continue_forcing(&forced, cfg.continuation.forcing_steps, &cfg.newton)?;
    write_continuation(&ctx.path("continuation_forcing.csv"), &continuation_rows(&run)?)?;
    dump_solutions(ctx, "continuation_forcing_fields.csv", &run.params, &run.solutions)?;
    let returned = start
        .map(|e| distance_modulo_translation(&op, &run.terminal().u, &e.u))
        .transpose()?;
    ctx.finish(
        "continue-forcing",
        json!({
            "removed_forcing_mean": removed_mean,
            "solutions": run.solutions.len(),
            "halvings": run.halvings,
            "continuity": run.continuity,
            "forced_max_real_eig": forced.max_real_eig(),
            "unforced_max_real_eig": run.terminal().max_real_eig(),
            "distance_to_start": returned,
        }),
    )
}

pub fn continue_domain(ctx: &Context) -> anyhow::Result<Value> {
    let cfg = &ctx.cfg;
    let op = SteadyOperator::new(cfg.grid)?;
    let e1 = lowest_equilibrium(&op, ctx)?;
    let mut branches = Vec::new();
    for &target in &cfg.continuation.target_lengths {
        let run = SteadyOperator::continue_domain(&e1, target, cfg.continuation.domain_steps, &cfg.newton)?;
        write_continuation(
            &ctx.path(&format!("continuation_domain_L{target}.csv")),
            &continuation_rows(&run)?,
        )?;
        // Grids differ along the branch, so the snapshots go to one file per step.
        for (i, eq) in run.solutions.iter().enumerate() {
            write_trajectory(
                &ctx.path(&format!("continuation_domain_L{target}_{i:03}.csv")),
                &[run.params[i]],
                std::slice::from_ref(&eq.u),
                &ctx.meta(&eq.grid),
            )?;
        }
        branches.push(json!({
            "target": target,
            "solutions": run.solutions.len(),
            "halvings": run.halvings,
            "terminal_max_real_eig": run.terminal().max_real_eig(),
        }));
    }
    ctx.finish("continue-domain", json!({ "branches": branches }))
}

fn gain_table(ctx: &Context, name: &str, gain: &LqrGain) -> anyhow::Result<()> {
    let header: Vec<String> = (0..gain.k.ncols()).map(|j| format!("x{j}")).collect();
    let rows: Vec<Vec<f64>> = (0..gain.k.nrows())
        .map(|i| gain.k.row(i).iter().copied().collect())
        .collect();
    write_table(&ctx.path(name), &header, &rows)?;
    Ok(())
}

/// Closed-loop run written as a trajectory dump; divergence is reported
/// rather than propagated.
#[allow(clippy::too_many_arguments)]
fn closed_loop_dump(
    ctx: &Context,
    name: &str,
    stepper: &Stepper,
    model: &LinearModel,
    gain: &LqrGain,
    actuator: &Actuator,
    u0: &RealField,
    sat: f64,
) -> anyhow::Result<Value> {
    let grid = *stepper.grid();
    let record = grid.steps_in(ctx.cfg.lqr.sample_every)?;
    match closed_loop_sim(stepper, model, gain, actuator, u0, ctx.cfg.lqr.duration, sat, record) {
        Ok(ClosedLoopRun { times, states, actions }) => {
            write_trajectory(&ctx.path(name), &times, &states, &ctx.meta(&grid))?;
            let last = states.last().expect("initial state is recorded");
            let saturated = actions.iter().flatten().filter(|a| a.abs() >= sat).count();
            Ok(json!({
                "final_deviation_rms": last.rms_distance(&model.target),
                "max_deviation_rms": states.iter().map(|u| u.rms_distance(&model.target)).fold(0.0, f64::max),
                "saturated_fraction": saturated as f64 / (actions.len() * actuator.n_jets()) as f64,
            }))
        }
        Err(e @ kscontrol::Error::Diverged { .. }) => Ok(json!({ "diverged": e.to_string() })),
        Err(e) => Err(e.into()),
    }
}

pub fn lqr(ctx: &Context, checkpoint: Option<&Path>) -> anyhow::Result<Value> {
    let cfg = &ctx.cfg;
    let grid = cfg.grid;
    let op = SteadyOperator::new(grid)?;
    let act = ctx.actuator(&grid)?;
    let sat = cfg.lqr.saturation_factor * cfg.jets.amp_limit;
    let n = grid.n_points;
    let q = DMatrix::identity(n, n);
    let r = DMatrix::identity(act.n_jets(), act.n_jets());
    let mut rng = stream_rng(cfg.seed, Stream::InitialConditions);
    let fourier = op.stepper().fourier();
    let perturbation = fourier.from_spectral(&smooth_random_state(&grid, &mut rng, cfg.lqr.perturbation, 4));
    let zero_gain = |gain: &LqrGain| {
        let mut g = gain.clone();
        g.k.fill(0.0);
        g
    };

    // Trivial solution: expected to fail both rank tests.
    let zero = RealField::zeros(n);
    let model = LinearModel::linearize(&op, &act, &zero, &zero)?;
    let ctrb = pbh_controllability(&model.a, &model.b)?;
    let stab = pbh_stabilizability(&model.a, &model.b)?;
    write_json(
        &ctx.path("pbh_zero.json"),
        &json!({ "controllability": ctrb, "stabilizability": stab }),
    )?;
    let partial = solve_care_partial(&model.a, &model.b, &q, &r)?;
    gain_table(ctx, "gain_zero.csv", &partial.gain)?;
    let u0 = zero.add(&perturbation);
    let zero_free = closed_loop_dump(
        ctx,
        "lqr_zero_free.csv",
        op.stepper(),
        &model,
        &zero_gain(&partial.gain),
        &act,
        &u0,
        sat,
    )?;
    let zero_ctrl = closed_loop_dump(
        ctx,
        "lqr_zero_control.csv",
        op.stepper(),
        &model,
        &partial.gain,
        &act,
        &u0,
        sat,
    )?;

    // Forced equilibrium.
    let (eq, _, removed_mean) = forced_equilibrium(ctx, &op, checkpoint, &cfg.lqr.jet_amplitudes)?;
    let model = LinearModel::linearize(&op, &act, &eq.u, &eq.f)?;
    let f_ctrb = pbh_controllability(&model.a, &model.b)?;
    let f_stab = pbh_stabilizability(&model.a, &model.b)?;
    write_json(
        &ctx.path("pbh_forced.json"),
        &json!({ "controllability": f_ctrb, "stabilizability": f_stab }),
    )?;
    write_trajectory(
        &ctx.path("forced_target.csv"),
        &[0.0],
        std::slice::from_ref(&eq.u),
        &ctx.meta(&grid),
    )?;
    let gain = solve_care(&model.a, &model.b, &q, &r)?;
    gain_table(ctx, "gain_forced.csv", &gain)?;
    let u0 = eq.u.add(&perturbation);
    let forced_free = closed_loop_dump(
        ctx,
        "lqr_forced_free.csv",
        op.stepper(),
        &model,
        &zero_gain(&gain),
        &act,
        &u0,
        sat,
    )?;
    let forced_ctrl = closed_loop_dump(
        ctx,
        "lqr_forced_control.csv",
        op.stepper(),
        &model,
        &gain,
        &act,
        &u0,
        sat,
    )?;

    ctx.finish(
        "lqr",
        json!({
            "zero": {
                "controllable": ctrb.pass,
                "stabilizable": stab.pass,
                "uncontrollable_directions": partial.uncontrollable.ncols(),
                "closed_loop_max_real": partial.closed_loop_max_real,
                "free": zero_free,
                "control": zero_ctrl,
            },
            "forced": {
                "removed_forcing_mean": removed_mean,
                "max_real_eig": eq.max_real_eig(),
                "controllable": f_ctrb.pass,
                "stabilizable": f_stab.pass,
                "free": forced_free,
                "control": forced_ctrl,
            },
            "saturation": sat,
        }),
    )
}

/// Tolerances of the symmetry audit.
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const FORCING_EQUIVARIANCE_TOL: f64 = 1e-8;
pub const STEP_EQUIVARIANCE_TOL: f64 = 1e-10;
pub const TRAJECTORY_EQUIVARIANCE_TOL: f64 = 1e-6;

/// Library states whose reduction is at least `1e-6` away from a
/// discontinuity.
pub fn boundary_safe_states(cfg: &RunConfig, count: usize) -> anyhow::Result<Vec<SpectralField>> {
    let library = IcLibrary::generate(&cfg.grid, &cfg.library, cfg.seed)?;
    let n = cfg.jets.n_jets;
    let states: Vec<SpectralField> = library
        .states
        .into_iter()
        .filter(|s| reduction_margin(&FourierStateVector::from(s), n) > 1e-6)
        .take(count)
        .collect();
    if states.len() < count {
        bail!(ConfigError(format!(
            "only {} boundary-safe library states",
            states.len()
        )));
    }
    Ok(states)
}

pub fn frozen_actor(cfg: &RunConfig) -> Mlp {
    let mut rng = stream_rng(cfg.seed, Stream::NetworkInit);
    let mut sizes = vec![cfg.grid.n_points];
    sizes.extend(&cfg.train.ddpg.hidden);
    sizes.push(cfg.jets.n_jets);
    Mlp::new(&sizes, Activation::Tanh, 1.0, &mut rng)
}

pub fn audit_symmetry(ctx: &Context) -> anyhow::Result<Value> {
    let cfg = &ctx.cfg;
    let grid = cfg.grid;
    let stepper = Stepper::new(grid)?;
    let fourier = stepper.fourier();
    let act = ctx.actuator(&grid)?;
    let mut rng = stream_rng(cfg.seed, Stream::Evaluation);
    let suite = symmetry_suite(&mut rng, 100, grid.n_modes());
    let states = boundary_safe_states(cfg, 20)?;
    let fields: Vec<RealField> = states.iter().map(|s| fourier.from_spectral(s)).collect();
    let actor = frozen_actor(cfg);
    let forcing = forcing_equivariance(&actor, &act, &stepper, &fields)?;
    let thetas: Vec<f64> = (0..8).map(|i| 0.37 + 0.79 * i as f64).collect();
    let banded: Vec<SpectralField> = states.iter().map(band_limited).collect();
    let step = step_equivariance(&stepper, &banded, &thetas)?;
    let episode = EpisodeConfig {
        obs_noise: 0.0,
        act_noise: 0.0,
        mode: Mode::Reduced,
        ..cfg.episode
    };
    let mut env = ControlEnv::new(grid, &cfg.jets, episode)?;
    let trajectory = trajectory_equivariance(&mut env, &actor, &fields[0])?;
    let pass = suite.max_error() <= SYMMETRY_TOL
        && forcing <= FORCING_EQUIVARIANCE_TOL
        && step <= STEP_EQUIVARIANCE_TOL
        && trajectory <= TRAJECTORY_EQUIVARIANCE_TOL;
    let summary = ctx.finish(
        "audit-symmetry",
        json!({
            "pass": pass,
            "operators": suite,
            "forcing_equivariance": forcing,
            "step_equivariance": step,
            "trajectory_equivariance": trajectory,
        }),
    )?;
    if !pass {
        bail!(NumericError("symmetry audit exceeded its tolerances".into()));
    }
    Ok(summary)
}
