//! Run configuration: one JSON document covering every command. Missing keys
//! take their defaults, unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kscontrol::actuation::JetConfig;
use kscontrol::env::{EpisodeConfig, IcLibraryConfig, Mode, TrainConfig};
use kscontrol::equilibria::NewtonConfig;
use kscontrol::spectral::GridConfig;

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub grid: GridConfig,
    pub jets: JetConfig,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
    pub library: IcLibraryConfig,
    pub newton: NewtonConfig,
    pub simulate: SimulateConfig,
    pub evaluate: EvaluateConfig,
    pub continuation: ContinuationConfig,
    pub lqr: LqrConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            grid: GridConfig::default(),
            jets: JetConfig::default(),
            episode: EpisodeConfig::default(),
            train: TrainConfig::default(),
            library: IcLibraryConfig::default(),
            newton: NewtonConfig::default(),
            simulate: SimulateConfig::default(),
            evaluate: EvaluateConfig::default(),
            continuation: ContinuationConfig::default(),
            lqr: LqrConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCondition {
    /// Smooth random field integrated past its transient.
    Random,
    Zero,
    /// Lowest-dissipation equilibrium of the unforced equation.
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub duration: f64,
    /// Dump every this many time units.
    pub sample_every: f64,
    pub initial: InitialCondition,
    /// Transient integrated before recording a random start.
    pub transient: f64,
    /// Constant jet amplitudes; empty means unforced.
    pub jet_amplitudes: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            duration: 250.0,
            sample_every: 0.25,
            initial: InitialCondition::Random,
            transient: 200.0,
            jet_amplitudes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub n_ics: usize,
    pub duration: f64,
    /// Domain lengths to evaluate on; the agent is reused unchanged.
    pub lengths: Vec<f64>,
    /// Noise levels applied to both observations and actions.
    pub noise_levels: Vec<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            n_ics: 100,
            duration: 250.0,
            lengths: vec![22.0],
            noise_levels: vec![0.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    /// Constant jet amplitudes of the forced equilibrium.
    pub jet_amplitudes: Vec<f64>,
    pub forcing_steps: usize,
    pub target_lengths: Vec<f64>,
    pub domain_steps: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            jet_amplitudes: vec![0.1, -0.05, 0.08, -0.13],
            forcing_steps: 20,
            target_lengths: vec![21.0, 23.0],
            domain_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrConfig {
    /// Jet amplitudes holding the forced target when no agent is supplied.
    pub jet_amplitudes: Vec<f64>,
    /// RMS of the initial perturbation.
    pub perturbation: f64,
    pub duration: f64,
    /// Saturation as a multiple of the agent's amplitude limit.
    pub saturation_factor: f64,
    pub sample_every: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            jet_amplitudes: vec![0.1, -0.05, 0.08, -0.13],
            perturbation: 0.01,
            duration: 100.0,
            saturation_factor: kscontrol::lqr::SATURATION_FACTOR,
            sample_every: 0.25,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>, mode: Option<Mode>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        if let Some(m) = mode {
            self.episode.mode = m;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |r: kscontrol::Result<()>| {
            r.map_err(|e| match e {
                kscontrol::Error::Config(msg) => ConfigError(msg),
                e => ConfigError(e.to_string()),
            })
        };
        check(self.grid.validate())?;
        check(self.episode.validate(&self.grid).map(|_| ()))?;
        check(self.train.validate())?;
        let jets = kscontrol::actuation::JetArray::equidistant(&self.jets, self.grid.length);
        check(jets.validate(&self.grid))?;
        let n = self.jets.n_jets;
        for (name, amps) in [
            ("simulate.jet_amplitudes", &self.simulate.jet_amplitudes),
            ("continuation.jet_amplitudes", &self.continuation.jet_amplitudes),
            ("lqr.jet_amplitudes", &self.lqr.jet_amplitudes),
        ] {
            if !amps.is_empty() && amps.len() != n {
                bail!(ConfigError(format!("{name} needs {n} entries, got {}", amps.len())));
            }
        }
        if !(self.simulate.duration > 0.0 && self.simulate.sample_every > 0.0 && self.simulate.transient >= 0.0) {
            bail!(ConfigError("simulate durations must be positive".into()));
        }
        if self.evaluate.n_ics == 0 || self.evaluate.lengths.is_empty() || self.evaluate.noise_levels.is_empty() {
            bail!(ConfigError(
                "evaluate needs initial conditions, lengths and noise levels".into()
            ));
        }
        if self.evaluate.lengths.iter().any(|l| !(*l > 0.0)) || self.evaluate.noise_levels.iter().any(|s| !(*s >= 0.0))
        {
            bail!(ConfigError(
                "evaluation lengths must be positive and noise levels non-negative".into()
            ));
        }
        if self.continuation.forcing_steps == 0 || self.continuation.domain_steps == 0 {
            bail!(ConfigError("continuation needs at least one step".into()));
        }
        if !(self.lqr.perturbation >= 0.0
            && self.lqr.duration > 0.0
            && self.lqr.saturation_factor > 0.0
            && self.lqr.sample_every > 0.0)
        {
            bail!(ConfigError("invalid lqr settings".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex. The output
    /// directory is left out so that reruns elsewhere hash the same.
    pub fn hash(&self) -> String {
        let located = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_string(&located).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
