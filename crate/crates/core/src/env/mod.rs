//! Control environment: the solver driven by jet actions held over fixed
//! windows, with optional symmetry reduction of observations and actions.

mod episode;
mod library;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use episode::{evaluate, rollout, EpisodeLog, StepRecord, TrainConfig, Trainer};
pub use library::{IcLibrary, IcLibraryConfig};

use crate::actuation::{clip, Actuator, JetArray, JetConfig};
use crate::error::{Error, Result};
use crate::spectral::{at_time, GridConfig, RealField, SpectralField, Stepper};
use crate::symmetry::{reduce, restore_action, FourierStateVector, SymmetryTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Raw observations and actions.
    Naive,
    /// Raw observations; every experience is stored with its group images.
    Augmented,
    /// Observations reduced to the fundamental domain, actions restored.
    #[serde(alias = "symmetry-reduced")]
    Reduced,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Naive => "naive",
            Mode::Augmented => "augmented",
            Mode::Reduced => "reduced",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Mode::Naive),
            "augmented" => Ok(Mode::Augmented),
            "reduced" | "symmetry-reduced" => Ok(Mode::Reduced),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Episode length in time units.
    pub duration: f64,
    /// Hold time of each action.
    pub action_window: f64,
    /// Std of Gaussian noise added to every observed grid value.
    pub obs_noise: f64,
    /// Std of Gaussian noise added to every applied jet amplitude.
    pub act_noise: f64,
    pub mode: Mode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration: 100.0,
            action_window: 0.25,
            obs_noise: 0.0,
            act_noise: 0.0,
            mode: Mode::Naive,
        }
    }
}

impl EpisodeConfig {
    /// Validates divisibility and returns `(steps per window, actions per episode)`.
    pub fn validate(&self, grid: &GridConfig) -> Result<(usize, usize)> {
        if !(self.obs_noise >= 0.0 && self.act_noise >= 0.0) {
            return Err(Error::Config("noise std must be non-negative".into()));
        }
        if !(self.action_window > 0.0) {
            return Err(Error::Config("action window must be positive".into()));
        }
        let window_steps = grid.steps_in(self.action_window)?;
        let ratio = self.duration / self.action_window;
        let n_actions = ratio.round();
        if n_actions < 1.0 || (ratio - n_actions).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "episode duration {} is not a positive multiple of the action window {}",
                self.duration, self.action_window
            )));
        }
        Ok((window_steps, n_actions as usize))
    }
}

/// What the agent sees: a real-space field, plus the reduction tag needed to
/// restore its action.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub field: RealField,
    pub tag: SymmetryTag,
    /// The phase was undefined and the translation reduction skipped.
    pub degenerate: bool,
}

/// Window-averaged outcome of one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub dissipation: f64,
    pub power: f64,
}

/// Solver plus jets plus episode bookkeeping.
#[derive(Debug, Clone)]
pub struct ControlEnv {
    stepper: Stepper,
    actuator: Actuator,
    cfg: EpisodeConfig,
    window_steps: usize,
    n_actions: usize,
    state: SpectralField,
    actions_taken: usize,
}

impl ControlEnv {
    pub fn new(grid: GridConfig, jets: &JetConfig, cfg: EpisodeConfig) -> Result<Self> {
        grid.validate()?;
        let (window_steps, n_actions) = cfg.validate(&grid)?;
        if cfg.mode == Mode::Reduced && !grid.n_points.is_multiple_of(jets.n_jets) {
            return Err(Error::Config(
                "symmetry reduction needs the jet count to divide the grid size".into(),
            ));
        }
        let actuator = Actuator::new(JetArray::equidistant(jets, grid.length), &grid)?;
        Ok(Self {
            state: SpectralField::zeros(grid.n_modes()),
            stepper: Stepper::new(grid)?,
            actuator,
            cfg,
            window_steps,
            n_actions,
            actions_taken: 0,
        })
    }

    pub fn grid(&self) -> &GridConfig {
        self.stepper.grid()
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    pub fn actuator(&self) -> &Actuator {
        &self.actuator
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn obs_dim(&self) -> usize {
        self.grid().n_points
    }

    pub fn act_dim(&self) -> usize {
        self.actuator.n_jets()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn window_steps(&self) -> usize {
        self.window_steps
    }

    pub fn reset(&mut self, u0: SpectralField) -> Result<()> {
        let m = self.grid().n_modes();
        if u0.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: u0.len(),
            });
        }
        self.state = u0;
        self.actions_taken = 0;
        Ok(())
    }

    pub fn state(&self) -> &SpectralField {
        &self.state
    }

    pub fn field(&self) -> RealField {
        self.stepper.fourier().from_spectral(&self.state)
    }

    pub fn time(&self) -> f64 {
        self.actions_taken as f64 * self.cfg.action_window
    }

    pub fn actions_taken(&self) -> usize {
        self.actions_taken
    }

    pub fn is_done(&self) -> bool {
        self.actions_taken >= self.n_actions
    }

    /// Observation of the current state, with measurement noise if configured.
    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        let mut u = self.field();
        if self.cfg.obs_noise > 0.0 {
            let normal = Normal::new(0.0, self.cfg.obs_noise).expect("validated std");
            u.0.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        match self.cfg.mode {
            Mode::Naive | Mode::Augmented => Observation {
                field: u,
                tag: SymmetryTag::identity(self.act_dim()),
                degenerate: false,
            },
            Mode::Reduced => {
                let fourier = self.stepper.fourier();
                let spectral = fourier.to_spectral(&u).expect("grid-sized field");
                let reduced = reduce(&FourierStateVector::from(&spectral), self.act_dim());
                Observation {
                    field: fourier.from_spectral(&SpectralField::from(&reduced.state)),
                    tag: reduced.tag,
                    degenerate: reduced.degenerate,
                }
            }
        }
    }

    /// Map an agent action in `[-1, 1]` (in the observation frame) to the jet
    /// amplitudes actually applied: restore, scale by the authority, add
    /// actuation noise, clip.
    pub fn physical_action<R: Rng + ?Sized>(
        &self,
        agent_action: &[f64],
        tag: &SymmetryTag,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if agent_action.len() != self.act_dim() {
            return Err(Error::LengthMismatch {
                expected: self.act_dim(),
                got: agent_action.len(),
            });
        }
        let frame = match self.cfg.mode {
            Mode::Reduced => restore_action(agent_action, tag)?,
            Mode::Naive | Mode::Augmented => agent_action.to_vec(),
        };
        let limit = self.actuator.jets().amp_limit;
        let mut a: Vec<f64> = frame.iter().map(|v| v * limit).collect();
        if self.cfg.act_noise > 0.0 {
            let normal = Normal::new(0.0, self.cfg.act_noise).expect("validated std");
            a.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        Ok(clip(&a, limit))
    }

    /// Hold `action` (physical amplitudes) for one window. The reward is the
    /// negated mean of `D + P_f` over the left-endpoint samples of the window.
    /// When `record` is given, the field at each of those samples is appended.
    pub fn step(&mut self, action: &[f64], record: Option<&mut Vec<RealField>>) -> Result<Transition> {
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::Config("action contains non-finite values".into()));
        }
        let forcing = self.actuator.forcing_field(action)?;
        let (next, transition) = self.window(&self.state, &forcing, record)?;
        self.state = next;
        self.actions_taken += 1;
        Ok(transition)
    }

    fn window(
        &self,
        start: &SpectralField,
        forcing: &RealField,
        mut record: Option<&mut Vec<RealField>>,
    ) -> Result<(SpectralField, Transition)> {
        let fourier = self.stepper.fourier();
        let fh = fourier.to_spectral(forcing)?;
        let mut state = start.clone();
        let (mut d_sum, mut p_sum) = (0.0, 0.0);
        let t0 = self.time();
        for i in 0..self.window_steps {
            d_sum += fourier.dissipation_spectral(&state);
            p_sum += fourier.power_input_spectral(&state, &fh);
            if let Some(rec) = record.as_deref_mut() {
                rec.push(fourier.from_spectral(&state));
            }
            state = self
                .stepper
                .step_spectral(&state, &fh)
                .map_err(|e| at_time(e, t0 + i as f64 * self.grid().dt))?;
        }
        let n = self.window_steps as f64;
        let (dissipation, power) = (d_sum / n, p_sum / n);
        Ok((
            state,
            Transition {
                reward: -(dissipation + power),
                dissipation,
                power,
            },
        ))
    }
}
