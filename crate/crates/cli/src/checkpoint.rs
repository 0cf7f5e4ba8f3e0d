use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gorl_core::decoder::Decoder;
use gorl_core::encoder::GaussianHead;
use gorl_core::envs::NormalizerState;
use gorl_core::ppo::{ComposedPolicy, Critic};
use gorl_core::scheduler::TrainState;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to act with, analyze, or freeze a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub seed: u64,
    pub stage: usize,
    pub cumulative_steps: usize,
    pub updates: usize,
    pub config: RunConfig,
    pub head: GaussianHead,
    pub critic: Critic,
    pub decoder: Decoder,
    pub normalizer: NormalizerState,
}

impl Checkpoint {
    pub fn capture(state: &TrainState, config: &RunConfig) -> Self {
        Self {
            format: FORMAT_VERSION,
            seed: state.config.seed,
            stage: state.stage,
            cumulative_steps: state.cumulative_steps,
            updates: state.updates,
            config: config.clone(),
            head: state.head.clone(),
            critic: state.critic.clone(),
            decoder: state.decoder.clone(),
            normalizer: state.normalizer.clone(),
        }
    }

    pub fn policy(&self) -> ComposedPolicy<'_> {
        ComposedPolicy {
            head: &self.head,
            critic: &self.critic,
            decoder: &self.decoder,
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string(self).map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if ck.format != FORMAT_VERSION {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                message: format!("checkpoint format {} (expected {FORMAT_VERSION})", ck.format),
            });
        }
        Ok(ck)
    }
}

pub fn stage_path(dir: &Path, seed: u64, stage: usize) -> PathBuf {
    dir.join(format!("run_{seed}_stage{stage}.json"))
}

pub fn latest_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_{seed}_latest.json"))
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}
