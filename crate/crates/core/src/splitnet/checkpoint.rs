use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SplitPlan;
use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::tensor::{NetworkParams, NetworkSpec};
use crate::ARTIFACT_VERSION;

pub const CHECKPOINT_FORMAT: &str = "popnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to regenerate the random streams of a run: all streams
/// are derived from `seed`, and per-epoch streams are indexed by epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epochs_completed: usize,
}

/// JSON model container. Layout is documented in `docs/checkpoint.md`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub artifact_version: String,
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub plan: Option<SplitPlan>,
    pub assignment: Option<GroupAssignment>,
    pub rng: RngState,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, params: NetworkParams, rng: RngState, config_hash: impl Into<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            artifact_version: ARTIFACT_VERSION.into(),
            spec,
            params,
            plan: None,
            assignment: None,
            rng,
            config_hash: config_hash.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("not a checkpoint: format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!(
                "checkpoint version {}, expected {CHECKPOINT_VERSION}",
                self.version
            )));
        }
        self.params.check_shapes(&self.spec)?;
        if let Some(plan) = &self.plan {
            if let Some(mask) = &self.params.split_mask {
                if mask != plan.block_mask() {
                    return Err(Error::State("split mask disagrees with the stored plan".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
