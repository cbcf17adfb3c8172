//! Gaussian jet actuators.
//!
//! ```text
//! f(x) = sum_i a_i / sqrt(2 pi sigma) * exp(-(x - X_i)^2 / (2 sigma^2))
//! ```
//!
//! with `x - X_i` taken to the nearest periodic image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{GridConfig, RealField};

/// Jet parameters as they appear in run configs; positions follow from `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JetConfig {
    pub n_jets: usize,
    /// Gaussian width in length units.
    pub sigma: f64,
    /// Maximum `|a_i|` available to the agent.
    pub amp_limit: f64,
}

impl Default for JetConfig {
    fn default() -> Self {
        Self {
            n_jets: 4,
            sigma: 0.4,
            amp_limit: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetArray {
    pub positions: Vec<f64>,
    pub sigma: f64,
    pub amp_limit: f64,
}

impl JetArray {
    /// `N` jets at `X_i = i L / N`.
    pub fn equidistant(cfg: &JetConfig, length: f64) -> Self {
        Self {
            positions: (0..cfg.n_jets).map(|i| i as f64 * length / cfg.n_jets as f64).collect(),
            sigma: cfg.sigma,
            amp_limit: cfg.amp_limit,
        }
    }

    pub fn n_jets(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Config("at least one jet is required".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("jet sigma must be positive, got {}", self.sigma)));
        }
        // Full width 2 sigma must span at least two grid spacings.
        if 2.0 * self.sigma < 2.0 * grid.dx() {
            return Err(Error::Config(format!(
                "jet sigma {} is not resolved by grid spacing {}",
                self.sigma,
                grid.dx()
            )));
        }
        if !(self.amp_limit > 0.0) {
            return Err(Error::Config(format!(
                "amp_limit must be positive, got {}",
                self.amp_limit
            )));
        }
        Ok(())
    }
}

/// Jet array bound to a grid, with the unit-amplitude basis fields cached.
#[derive(Debug, Clone)]
pub struct Actuator {
    jets: JetArray,
    basis: Vec<RealField>,
}

impl Actuator {
    pub fn new(jets: JetArray, grid: &GridConfig) -> Result<Self> {
        jets.validate(grid)?;
        let length = grid.length;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * jets.sigma).sqrt();
        let basis = jets
            .positions
            .iter()
            .map(|&centre| {
                RealField::from_fn(grid, |x| {
                    let mut d = x - centre;
                    d -= length * (d / length).round();
                    norm * (-d * d / (2.0 * jets.sigma * jets.sigma)).exp()
                })
            })
            .collect();
        Ok(Self { jets, basis })
    }

    pub fn jets(&self) -> &JetArray {
        &self.jets
    }

    pub fn n_jets(&self) -> usize {
        self.basis.len()
    }

    /// Forcing field of jet `i` at unit amplitude.
    pub fn basis(&self, i: usize) -> &RealField {
        &self.basis[i]
    }

    pub fn forcing_field(&self, a: &[f64]) -> Result<RealField> {
        if a.len() != self.basis.len() {
            return Err(Error::LengthMismatch {
                expected: self.basis.len(),
                got: a.len(),
            });
        }
        let n = self.basis[0].len();
        let mut f = vec![0.0; n];
        for (amp, b) in a.iter().zip(&self.basis) {
            for (fj, bj) in f.iter_mut().zip(&b.0) {
                *fj += amp * bj;
            }
        }
        Ok(RealField(f))
    }
}

/// Componentwise clamp to `[-limit, limit]`.
pub fn clip(a: &[f64], limit: f64) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-limit, limit)).collect()
}
