//! Run configuration: flat `key = value` text with arrays for stage plans.

use std::path::Path;

use serde::{Deserialize, Serialize};

use gorl_core::decoder::{DecoderArch, DecoderKind, DecoderTrainConfig};
use gorl_core::envs::EnvKind;
use gorl_core::ppo::{PpoConfig, PriorPenalty};
use gorl_core::scheduler::{DecoderData, StagePlan, TrainConfig};

use crate::error::{CliError, CliResult};

pub const DEFAULT_BETAS: [f64; 6] = [0.0, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub n_envs: usize,
    pub horizon: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub kl_beta: f64,
    pub prior_penalty: PriorPenalty,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub encoder_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub decoder: String,
    pub decoder_hidden: Vec<usize>,
    pub n_ode_steps: usize,
    pub diffusion_steps: usize,
    pub time_frequencies: usize,
    pub decoder_batch_size: usize,
    pub decoder_lr: f64,
    pub stage_budgets: Vec<usize>,
    pub decoder_epochs: Vec<usize>,
    pub reinit_encoder: Vec<bool>,
    pub reinit_trunk: bool,
    pub decoder_from_scratch: bool,
    pub reset_critic: bool,
    pub decoder_data: DecoderData,
    pub decoder_top_fraction: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    pub checkpoint_every: usize,
    pub beta_list: Vec<f64>,
    pub stage_study_budget: usize,
    /// Raw state for the density analysis; empty picks one by rule.
    pub analysis_state: Vec<f64>,
    pub analysis_samples: usize,
    pub bandwidth_factor: f64,
    pub curve_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            env: t.env.name().to_string(),
            seed: t.seed,
            n_envs: t.n_envs,
            horizon: t.ppo.horizon,
            clip: t.ppo.clip,
            gamma: t.ppo.gamma,
            lambda: t.ppo.lambda,
            value_coef: t.ppo.value_coef,
            entropy_coef: t.ppo.entropy_coef,
            kl_beta: t.ppo.kl_beta,
            prior_penalty: t.ppo.prior_penalty,
            ppo_epochs: t.ppo.epochs,
            minibatch: t.ppo.minibatch,
            lr: t.ppo.lr,
            encoder_hidden: t.encoder_hidden,
            critic_hidden: t.critic_hidden,
            decoder: t.decoder_kind.tag().to_string(),
            decoder_hidden: t.decoder_arch.hidden,
            n_ode_steps: t.decoder_arch.n_ode_steps,
            diffusion_steps: t.decoder_arch.diffusion_steps,
            time_frequencies: t.decoder_arch.time_frequencies,
            decoder_batch_size: t.decoder_train.batch_size,
            decoder_lr: t.decoder_train.lr,
            stage_budgets: t.plan.budgets,
            decoder_epochs: t.plan.decoder_epochs,
            reinit_encoder: t.plan.reinit_encoder,
            reinit_trunk: t.reinit_trunk,
            decoder_from_scratch: t.decoder_from_scratch,
            reset_critic: t.reset_critic,
            decoder_data: t.decoder_data,
            decoder_top_fraction: t.decoder_top_fraction,
            eval_every: t.eval_every,
            eval_episodes: t.eval_episodes,
            final_eval_episodes: 1024,
            checkpoint_every: 50,
            beta_list: DEFAULT_BETAS.to_vec(),
            stage_study_budget: 60_000,
            analysis_state: Vec::new(),
            analysis_samples: 10_000,
            bandwidth_factor: gorl_core::analysis::DEFAULT_BANDWIDTH_FACTOR,
            curve_sigma: gorl_core::analysis::DEFAULT_CURVE_SIGMA,
        }
    }
}

/// 1-based line of the first `key = ...` assignment in `text`.
pub fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
    })
    .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            key: None,
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        if let Err(e) = cfg.train_config() {
            return Err(match e {
                CliError::Config { key: Some(k), message, .. } => CliError::Config {
                    line: line_of_key(text, &k),
                    key: Some(k),
                    message,
                },
                other => other,
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn env_kind(&self) -> CliResult<EnvKind> {
        self.env
            .replace(['_', '-'], "")
            .parse()
            .map_err(|e: gorl_core::Error| CliError::config("env", e.to_string()))
    }

    pub fn decoder_kind(&self) -> CliResult<DecoderKind> {
        self.decoder
            .parse()
            .map_err(|e: gorl_core::Error| CliError::config("decoder", e.to_string()))
    }

    /// Validated learner configuration.
    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let ppo = PpoConfig {
            clip: self.clip,
            gamma: self.gamma,
            lambda: self.lambda,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            kl_beta: self.kl_beta,
            prior_penalty: self.prior_penalty,
            epochs: self.ppo_epochs,
            minibatch: self.minibatch,
            lr: self.lr,
            horizon: self.horizon,
        };
        let cfg = TrainConfig {
            env: self.env_kind()?,
            seed: self.seed,
            n_envs: self.n_envs,
            ppo,
            encoder_hidden: self.encoder_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            decoder_kind: self.decoder_kind()?,
            decoder_arch: DecoderArch {
                hidden: self.decoder_hidden.clone(),
                n_ode_steps: self.n_ode_steps,
                diffusion_steps: self.diffusion_steps,
                time_frequencies: self.time_frequencies,
            },
            decoder_train: DecoderTrainConfig {
                epochs: self.decoder_epochs.first().copied().unwrap_or(0),
                batch_size: self.decoder_batch_size,
                lr: self.decoder_lr,
            },
            plan: StagePlan {
                budgets: self.stage_budgets.clone(),
                decoder_epochs: self.decoder_epochs.clone(),
                reinit_encoder: self.reinit_encoder.clone(),
            },
            reinit_trunk: self.reinit_trunk,
            decoder_from_scratch: self.decoder_from_scratch,
            reset_critic: self.reset_critic,
            decoder_data: self.decoder_data,
            decoder_top_fraction: self.decoder_top_fraction,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
        };
        cfg.validate().map_err(|(k, m)| CliError::config(k, m))?;
        let checks: [(&str, bool, &str); 7] = [
            ("encoder_hidden", !self.encoder_hidden.contains(&0), "widths must be >= 1"),
            ("critic_hidden", !self.critic_hidden.contains(&0), "widths must be >= 1"),
            ("decoder_hidden", !self.decoder_hidden.contains(&0), "widths must be >= 1"),
            ("final_eval_episodes", self.final_eval_episodes > 0, "must be >= 1"),
            ("analysis_samples", self.analysis_samples >= 2, "must be >= 2"),
            ("bandwidth_factor", self.bandwidth_factor > 0.0, "must be > 0"),
            ("curve_sigma", self.curve_sigma >= 0.0, "must be >= 0"),
        ];
        if let Some((k, _, m)) = checks.iter().find(|c| !c.1) {
            return Err(CliError::config(*k, *m));
        }
        if self.beta_list.iter().any(|b| b.is_nan() || *b < 0.0 || b.is_infinite()) {
            return Err(CliError::config("beta_list", "betas must be finite and >= 0"));
        }
        Ok(cfg)
    }
}
