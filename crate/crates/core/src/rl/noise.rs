use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuConfig {
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma: 0.2,
            dt: 1.0,
        }
    }
}

/// Ornstein-Uhlenbeck exploration noise with a decaying output scale.
#[derive(Debug, Clone)]
pub struct OuNoise {
    cfg: OuConfig,
    state: Vec<f64>,
    scale: f64,
    decay: f64,
}

impl OuNoise {
    pub fn new(dim: usize, cfg: OuConfig) -> Self {
        Self {
            cfg,
            state: vec![0.0; dim],
            scale: 1.0,
            decay: 1.0,
        }
    }

    /// Per-episode decay factor that brings the scale from 1 to `target`
    /// after `episodes` decays.
    pub fn decay_for(target: f64, episodes: usize) -> f64 {
        if episodes == 0 {
            return 1.0;
        }
        target.clamp(f64::MIN_POSITIVE, 1.0).powf(1.0 / episodes as f64)
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay.clamp(0.0, 1.0);
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale.clamp(0.0, 1.0);
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn decay_scale(&mut self) {
        self.scale *= self.decay;
    }

    /// Advance the process one step and return `scale * x`.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let OuConfig { theta, sigma, dt } = self.cfg;
        let amp = sigma * dt.sqrt();
        for x in self.state.iter_mut() {
            let eta: f64 = rng.sample(StandardNormal);
            *x += -theta * *x * dt + amp * eta;
        }
        self.state.iter().map(|x| self.scale * x).collect()
    }
}
