use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::spectral::{smooth_random_state, GridConfig, SpectralField, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcLibraryConfig {
    /// Total unforced integration time.
    pub total: f64,
    /// Initial stretch that is discarded.
    pub transient: f64,
    /// Time between stored snapshots.
    pub interval: f64,
    /// RMS amplitude of the random starting field.
    pub initial_rms: f64,
}

impl Default for IcLibraryConfig {
    fn default() -> Self {
        Self {
            total: 2500.0,
            transient: 500.0,
            interval: 5.0,
            initial_rms: 0.5,
        }
    }
}

/// Snapshots of the unforced attractor used as episode initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct IcLibrary {
    pub seed: u64,
    pub states: Vec<SpectralField>,
}

impl IcLibrary {
    pub fn generate(grid: &GridConfig, cfg: &IcLibraryConfig, seed: u64) -> Result<Self> {
        if !(cfg.transient >= 0.0 && cfg.interval > 0.0 && cfg.total > cfg.transient) {
            return Err(Error::Config(
                "library needs 0 <= transient < total and a positive interval".into(),
            ));
        }
        let stepper = Stepper::new(*grid)?;
        let mut rng = stream_rng(seed, Stream::Library);
        let mut state = smooth_random_state(grid, &mut rng, cfg.initial_rms, 4);
        state = stepper.advance_unforced(&state, grid.steps_in(cfg.transient)?)?;
        let per_snapshot = grid.steps_in(cfg.interval)?;
        let count = ((cfg.total - cfg.transient) / cfg.interval).floor() as usize;
        let mut states = Vec::with_capacity(count);
        for _ in 0..count {
            state = stepper.advance_unforced(&state, per_snapshot)?;
            states.push(state.clone());
        }
        Ok(Self { seed, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &SpectralField {
        self.states.choose(rng).expect("library is never empty")
    }
}
