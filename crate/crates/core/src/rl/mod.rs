//! Deep deterministic policy gradient machinery.

pub mod adam;
pub mod buffer;
pub mod ddpg;
pub mod mlp;
pub mod noise;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use buffer::{Experience, ReplayBuffer};
pub use ddpg::{DdpgAgent, DdpgConfig};
pub use mlp::{Activation, Matrix, Mlp};
pub use noise::{OuConfig, OuNoise};

use crate::error::{Error, Result};
use crate::rng::RngState;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized agent plus the generator positions needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub agent: DdpgAgent,
    #[serde(default)]
    pub rng: Vec<RngState>,
    /// Free-form metadata such as the episode count or config hash.
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(agent: DdpgAgent) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            agent,
            rng: Vec::new(),
            meta: Default::default(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    /// Load and check that the agent has the expected observation and action sizes.
    pub fn load(path: &Path, obs_dim: usize, act_dim: usize) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint version {} is not supported",
                ck.version
            )));
        }
        ck.agent.check_consistency()?;
        if ck.agent.obs_dim() != obs_dim || ck.agent.act_dim() != act_dim {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint agent is {}->{}, expected {}->{}",
                ck.agent.obs_dim(),
                ck.agent.act_dim(),
                obs_dim,
                act_dim
            )));
        }
        Ok(ck)
    }
}
