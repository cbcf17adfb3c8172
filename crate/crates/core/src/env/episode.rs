use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ControlEnv, IcLibrary, Mode};
use crate::actuation::clip;
use crate::error::{Error, Result};
use crate::rl::{DdpgAgent, DdpgConfig, Experience, Mlp, OuConfig, OuNoise, ReplayBuffer};
use crate::rng::{stream_rng, RngState, Stream};
use crate::spectral::{RealField, SpectralField};
use crate::symmetry::GroupElement;

/// One action window of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Start of the window.
    pub t: f64,
    pub r: f64,
    /// Window-mean dissipation.
    pub d: f64,
    /// Window-mean power input.
    pub pf: f64,
    /// Applied jet amplitudes.
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    /// Time at which the integration blew up, if it did.
    pub diverged: Option<f64>,
    /// Exploration scale in effect during the episode.
    pub beta: f64,
    /// Mean critic loss over the updates of the episode.
    pub critic_loss: Option<f64>,
    pub updates: usize,
    /// Field at every dt sample, when recording was requested.
    pub states: Option<Vec<RealField>>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.r).sum()
    }

    /// Time-mean of `D + P_f` over the completed windows.
    pub fn mean_cost(&self) -> f64 {
        if self.steps.is_empty() {
            return f64::NAN;
        }
        self.steps.iter().map(|s| s.d + s.pf).sum::<f64>() / self.steps.len() as f64
    }
}

fn zero_action(env: &ControlEnv) -> Vec<f64> {
    vec![0.0; env.act_dim()]
}

/// Run a fixed policy for one episode from `u0`. `None` means no control.
/// Divergence ends the episode and is reported in the log.
pub fn rollout<R: Rng + ?Sized>(
    env: &mut ControlEnv,
    actor: Option<&Mlp>,
    u0: &SpectralField,
    noise_rng: &mut R,
    record_states: bool,
) -> Result<EpisodeLog> {
    env.reset(u0.clone())?;
    let mut log = EpisodeLog {
        states: record_states.then(Vec::new),
        ..EpisodeLog::default()
    };
    while !env.is_done() {
        let obs = env.observe(noise_rng);
        let agent_action = match actor {
            Some(net) => clip(&net.forward(obs.field.as_slice())?, 1.0),
            None => zero_action(env),
        };
        let action = match actor {
            Some(_) => env.physical_action(&agent_action, &obs.tag, noise_rng)?,
            None => agent_action,
        };
        let t = env.time();
        match env.step(&action, log.states.as_mut()) {
            Ok(tr) => log.steps.push(StepRecord {
                step: log.steps.len(),
                t,
                r: tr.reward,
                d: tr.dissipation,
                pf: tr.power,
                action,
            }),
            Err(Error::Diverged { time, .. }) => {
                log.diverged = Some(time);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(states) = log.states.as_mut() {
        if log.diverged.is_none() {
            states.push(env.field());
        }
    }
    Ok(log)
}

/// Rollouts from each initial condition, fanned out over worker threads.
/// Noise for IC `i` comes from its own stream, so results do not depend on
/// the number of workers.
pub fn evaluate(env: &ControlEnv, actor: Option<&Mlp>, ics: &[SpectralField], seed: u64) -> Result<Vec<EpisodeLog>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(ics.len().max(1));
    let run_one = |i: usize, env: &mut ControlEnv| {
        let mut rng = stream_rng(seed.wrapping_add(i as u64), Stream::Evaluation);
        rollout(env, actor, &ics[i], &mut rng, false)
    };
    if workers <= 1 {
        let mut env = env.clone();
        return (0..ics.len()).map(|i| run_one(i, &mut env)).collect();
    }
    let mut results: Vec<Option<Result<EpisodeLog>>> = (0..ics.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(ics.len().div_ceil(workers)).enumerate().collect();
        let chunk_len = ics.len().div_ceil(workers);
        for (c, slots) in chunks {
            let mut env = env.clone();
            let run_one = &run_one;
            scope.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(run_one(c * chunk_len + k, &mut env));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub ddpg: DdpgConfig,
    pub ou: OuConfig,
    /// Exploration scale reached after `beta_final_fraction` of the episodes.
    pub beta_final: f64,
    pub beta_final_fraction: f64,
    /// Consecutive diverged episodes tolerated before giving up.
    pub max_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 4000,
            ddpg: DdpgConfig::default(),
            ou: OuConfig::default(),
            beta_final: 0.05,
            beta_final_fraction: 0.8,
            max_restarts: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ddpg.validate()?;
        if !(self.beta_final > 0.0 && self.beta_final <= 1.0) {
            return Err(Error::Config("beta_final must lie in (0, 1]".into()));
        }
        if !(self.beta_final_fraction > 0.0 && self.beta_final_fraction <= 1.0) {
            return Err(Error::Config("beta_final_fraction must lie in (0, 1]".into()));
        }
        if !(self.ou.theta >= 0.0 && self.ou.sigma >= 0.0 && self.ou.dt > 0.0) {
            return Err(Error::Config("invalid OU parameters".into()));
        }
        Ok(())
    }

    pub fn beta_decay(&self) -> f64 {
        let n = (self.beta_final_fraction * self.episodes as f64).round() as usize;
        OuNoise::decay_for(self.beta_final, n.max(1))
    }
}

/// DDPG training loop over the control environment. Reduced mode stores
/// reduced transitions; augmented mode stores each transition together with
/// its images under the symmetry group.
#[derive(Debug)]
pub struct Trainer {
    pub env: ControlEnv,
    pub agent: DdpgAgent,
    pub buffer: ReplayBuffer,
    pub ou: OuNoise,
    explore_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    ic_rng: ChaCha8Rng,
    group: Vec<GroupElement>,
    batch_size: usize,
    max_restarts: usize,
    pub diverged_episodes: usize,
}

impl Trainer {
    pub fn new(env: ControlEnv, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = stream_rng(seed, Stream::NetworkInit);
        let agent = DdpgAgent::new(env.obs_dim(), env.act_dim(), cfg.ddpg.clone(), &mut init_rng)?;
        Self::with_agent(env, agent, cfg, seed)
    }

    pub fn with_agent(env: ControlEnv, agent: DdpgAgent, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if agent.obs_dim() != env.obs_dim() || agent.act_dim() != env.act_dim() {
            return Err(Error::ShapeMismatch(format!(
                "agent {}->{} does not fit environment {}->{}",
                agent.obs_dim(),
                agent.act_dim(),
                env.obs_dim(),
                env.act_dim()
            )));
        }
        let n = env.act_dim();
        let group = if env.mode() == Mode::Augmented {
            if !env.obs_dim().is_multiple_of(n) {
                return Err(Error::Config(
                    "augmentation needs the jet count to divide the grid size".into(),
                ));
            }
            GroupElement::all(n).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            ou: OuNoise::new(n, cfg.ou).with_decay(cfg.beta_decay()),
            buffer: ReplayBuffer::new(cfg.ddpg.buffer_capacity),
            batch_size: cfg.ddpg.batch_size,
            explore_rng: stream_rng(seed, Stream::Exploration),
            sample_rng: stream_rng(seed, Stream::Sampling),
            noise_rng: stream_rng(seed, Stream::EnvNoise),
            ic_rng: stream_rng(seed, Stream::InitialConditions),
            max_restarts: cfg.max_restarts,
            diverged_episodes: 0,
            group,
            agent,
            env,
        })
    }

    fn store(&mut self, s: &RealField, a: &[f64], r: f64, s_next: &RealField) {
        if self.group.is_empty() {
            self.buffer.push(Experience {
                s: s.0.clone(),
                a: a.to_vec(),
                r,
                s_next: s_next.0.clone(),
            });
            return;
        }
        // The reward is invariant under the group, so every image shares it.
        for g in &self.group {
            self.buffer.push(Experience {
                s: g.apply_field(s).0,
                a: g.apply_action(a),
                r,
                s_next: g.apply_field(s_next).0,
            });
        }
    }

    /// Positions of the exploration, sampling, noise and initial-condition streams.
    pub fn rng_states(&self) -> Vec<RngState> {
        [&self.explore_rng, &self.sample_rng, &self.noise_rng, &self.ic_rng]
            .into_iter()
            .map(RngState::capture)
            .collect()
    }

    /// One learning episode from `u0`, decaying the exploration scale at its end.
    pub fn run_episode(&mut self, u0: &SpectralField) -> Result<EpisodeLog> {
        self.env.reset(u0.clone())?;
        self.ou.reset();
        let mut log = EpisodeLog {
            beta: self.ou.scale(),
            ..EpisodeLog::default()
        };
        let mut loss_sum = 0.0;
        let mut obs = self.env.observe(&mut self.noise_rng);
        while !self.env.is_done() {
            let policy = self.agent.act(obs.field.as_slice())?;
            let explore = self.ou.sample(&mut self.explore_rng);
            let frame_action: Vec<f64> = clip(
                &policy.iter().zip(&explore).map(|(p, e)| p + e).collect::<Vec<_>>(),
                1.0,
            );
            let action = self.env.physical_action(&frame_action, &obs.tag, &mut self.noise_rng)?;
            let t = self.env.time();
            let tr = match self.env.step(&action, None) {
                Ok(tr) => tr,
                Err(Error::Diverged { time, .. }) => {
                    log.diverged = Some(time);
                    break;
                }
                Err(e) => return Err(e),
            };
            let next = self.env.observe(&mut self.noise_rng);
            self.store(&obs.field, &frame_action, tr.reward, &next.field);
            if self.buffer.len() >= self.batch_size {
                let batch = self.buffer.sample(&mut self.sample_rng, self.batch_size)?;
                let (loss, _) = self.agent.update(&batch)?;
                loss_sum += loss;
                log.updates += 1;
            }
            log.steps.push(StepRecord {
                step: log.steps.len(),
                t,
                r: tr.reward,
                d: tr.dissipation,
                pf: tr.power,
                action,
            });
            obs = next;
        }
        if log.updates > 0 {
            log.critic_loss = Some(loss_sum / log.updates as f64);
        }
        self.ou.decay_scale();
        Ok(log)
    }

    /// Episode from a random library state, retried from a fresh state after
    /// a divergence.
    pub fn train_episode(&mut self, library: &IcLibrary) -> Result<EpisodeLog> {
        let mut restarts = 0;
        loop {
            let u0 = library.draw(&mut self.ic_rng).clone();
            let log = self.run_episode(&u0)?;
            match log.diverged {
                None => return Ok(log),
                Some(time) => {
                    self.diverged_episodes += 1;
                    restarts += 1;
                    if restarts > self.max_restarts {
                        return Err(Error::Diverged {
                            time,
                            max_abs: f64::INFINITY,
                        });
                    }
                }
            }
        }
    }
}
