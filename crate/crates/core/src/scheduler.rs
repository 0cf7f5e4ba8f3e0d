//! Staged alternation between encoder optimization with the decoder frozen
//! and decoder refinement with the encoder frozen.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::decoder::{
    train_decoder, Decoder, DecoderArch, DecoderDataset, DecoderKind, DecoderTrainConfig,
};
use crate::encoder::GaussianHead;
use crate::envs::{
    collect_rollouts, EnvKind, EnvSpec, NormalizerState, RolloutBuffer, VecEnv, ENV_STREAM_BASE,
};
use crate::error::{Error, Result};
use crate::mathcore::{fingerprint, RngStream};
use crate::ppo::{
    buffer_advantages, encoder_update, ComposedPolicy, Critic, PpoConfig, PpoOptimizers,
    UpdateStats,
};

pub const STREAM_ENCODER_INIT: u64 = 1;
pub const STREAM_CRITIC_INIT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_DECODER_INIT: u64 = 4;
pub const STREAM_DECODER_TRAIN: u64 = 5;
pub const STREAM_REINIT: u64 = 6;
/// Evaluation instances use `EVAL_STREAM_BASE + i`.
pub const EVAL_STREAM_BASE: u64 = 1 << 40;

/// Which rollouts feed a decoder refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderData {
    /// Every rollout of the encoder phase that just ended.
    Stage,
    /// Only the last rollout.
    Latest,
    /// Every rollout since the start of training.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    /// Environment steps of each stage.
    pub budgets: Vec<usize>,
    /// Decoder epochs at each stage boundary; a single value applies to all.
    pub decoder_epochs: Vec<usize>,
    /// Reset the encoder to the prior at the start of each stage.
    pub reinit_encoder: Vec<bool>,
}

impl StagePlan {
    pub fn n_stages(&self) -> usize {
        self.budgets.len()
    }

    pub fn epochs_after(&self, stage: usize) -> usize {
        match self.decoder_epochs.len() {
            0 => 0,
            1 => self.decoder_epochs[0],
            _ => self.decoder_epochs[stage],
        }
    }

    pub fn reinit_at(&self, stage: usize) -> bool {
        stage > 0 && self.reinit_encoder.get(stage).copied().unwrap_or(true)
    }

    pub fn total_budget(&self) -> usize {
        self.budgets.iter().sum()
    }
}

/// Everything needed to run an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub n_envs: usize,
    pub ppo: PpoConfig,
    pub encoder_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub decoder_kind: DecoderKind,
    pub decoder_arch: DecoderArch,
    pub decoder_train: DecoderTrainConfig,
    pub plan: StagePlan,
    pub reinit_trunk: bool,
    pub decoder_from_scratch: bool,
    pub reset_critic: bool,
    pub decoder_data: DecoderData,
    /// Keep only this top fraction of transitions (ranked by advantage) for
    /// decoder refinement; 1 keeps everything.
    pub decoder_top_fraction: f64,
    /// Evaluate every this many updates (0 disables periodic evaluation).
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::BimodalBandit,
            seed: 0,
            n_envs: 64,
            ppo: PpoConfig::default(),
            encoder_hidden: vec![32, 32, 32],
            critic_hidden: vec![32, 32, 32, 32],
            decoder_kind: DecoderKind::FlowMatching,
            decoder_arch: DecoderArch::default(),
            decoder_train: DecoderTrainConfig::default(),
            plan: StagePlan {
                budgets: vec![60_000, 60_000, 30_000, 30_000],
                decoder_epochs: vec![50],
                reinit_encoder: vec![false, true, true, true],
            },
            reinit_trunk: false,
            decoder_from_scratch: false,
            reset_critic: false,
            decoder_data: DecoderData::Stage,
            decoder_top_fraction: 1.0,
            eval_every: 10,
            eval_episodes: 16,
        }
    }
}

impl TrainConfig {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec::new(self.env)
    }

    pub fn steps_per_rollout(&self) -> usize {
        self.n_envs * self.ppo.horizon
    }

    /// First violated constraint as `(key, message)`.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        self.ppo.validate()?;
        if self.n_envs == 0 {
            return Err(("n_envs", "n_envs must be >= 1".into()));
        }
        let plan = &self.plan;
        if plan.budgets.is_empty() {
            return Err(("stage_budgets", "at least one stage is required".into()));
        }
        let per = self.steps_per_rollout();
        if let Some(b) = plan.budgets.iter().find(|&&b| b < per) {
            return Err((
                "stage_budgets",
                format!("stage budget {b} is below one rollout (n_envs x horizon = {per})"),
            ));
        }
        let m = plan.n_stages();
        if plan.decoder_epochs.len() > 1 && plan.decoder_epochs.len() < m.saturating_sub(1) {
            return Err((
                "decoder_epochs",
                format!("need 1 or {} entries, got {}", m - 1, plan.decoder_epochs.len()),
            ));
        }
        if !plan.reinit_encoder.is_empty() && plan.reinit_encoder.len() != m {
            return Err((
                "reinit_encoder",
                format!("need {m} entries, got {}", plan.reinit_encoder.len()),
            ));
        }
        if !(self.decoder_top_fraction > 0.0 && self.decoder_top_fraction <= 1.0) {
            return Err((
                "decoder_top_fraction",
                format!("must lie in (0, 1], got {}", self.decoder_top_fraction),
            ));
        }
        if self.decoder_train.batch_size == 0 {
            return Err(("decoder_batch_size", "must be >= 1".into()));
        }
        if !(self.decoder_train.lr > 0.0) {
            return Err(("decoder_lr", "must be > 0".into()));
        }
        if self.decoder_arch.n_ode_steps == 0 {
            return Err(("n_ode_steps", "must be >= 1".into()));
        }
        if self.decoder_arch.diffusion_steps == 0 {
            return Err(("diffusion_steps", "must be >= 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(("eval_episodes", "must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_return: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_to_prior: f64,
    pub clip_frac: f64,
    pub decoder_loss: f64,
    pub stage: usize,
}

impl MetricsRow {
    pub const HEADER: &'static str =
        "step,mean_return,value_loss,entropy,kl_to_prior,clip_frac,decoder_loss,stage";

    pub fn from_update(
        step: usize,
        mean_return: f64,
        stats: &UpdateStats,
        decoder_loss: f64,
        stage: usize,
    ) -> Self {
        Self {
            step,
            mean_return,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            kl_to_prior: stats.kl_to_prior,
            clip_frac: stats.clip_frac,
            decoder_loss,
            stage,
        }
    }

    /// CSV line with 17 significant digits.
    pub fn csv(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.step,
            self.mean_return,
            self.value_loss,
            self.entropy,
            self.kl_to_prior,
            self.clip_frac,
            self.decoder_loss,
            self.stage
        )
    }
}

/// Mean raw return of the most recent finished episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnWindow {
    capacity: usize,
    values: VecDeque<f64>,
}

impl ReturnWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            values: VecDeque::new(),
        }
    }

    pub fn extend(&mut self, returns: &[f64]) {
        for &r in returns {
            if self.values.len() == self.capacity {
                self.values.pop_front();
            }
            self.values.push_back(r);
        }
    }

    /// NaN until an episode has finished.
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            f64::NAN
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Mean return of `episodes` fresh episodes, one per instance, with a frozen
/// normalizer. Instance streams are fixed, so repeated calls share draws.
pub fn evaluate<P: crate::envs::PolicySampler + ?Sized>(
    policy: &P,
    spec: EnvSpec,
    normalizer: &NormalizerState,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut envs = VecEnv::new(spec, episodes, seed, EVAL_STREAM_BASE)?;
    let mut norm = normalizer.clone();
    let buf = collect_rollouts(policy, &mut envs, &mut norm, spec.episode_length, false)?;
    buf.mean_episode_return()
        .ok_or_else(|| Error::Empty("no evaluation episode finished".into()))
}

/// Notifications for logging and persistence.
pub trait TrainObserver {
    fn on_update(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }
    /// Called after each stage's encoder phase, before its decoder refinement.
    fn on_stage_end(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
    /// Called after every update (for periodic checkpoints).
    fn on_progress(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// An observer that ignores everything.
pub struct NullObserver;

impl TrainObserver for NullObserver {}

/// Evaluation taken during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub stage: usize,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub stage: usize,
    pub cumulative_steps: usize,
    pub collect_calls: usize,
    pub updates: usize,
    pub head: GaussianHead,
    pub critic: Critic,
    pub decoder: Decoder,
    pub normalizer: NormalizerState,
    pub envs: VecEnv,
    pub optimizers: PpoOptimizers,
    pub shuffle_stream: RngStream,
    pub decoder_init_stream: RngStream,
    pub decoder_stream: RngStream,
    pub reinit_stream: RngStream,
    pub critic_stream: RngStream,
    pub returns: ReturnWindow,
    pub decoder_loss: f64,
    /// Loss history of every decoder refinement so far.
    pub decoder_histories: Vec<Vec<f64>>,
    pub stage_buffers: Vec<RolloutBuffer>,
    pub history_buffers: Vec<RolloutBuffer>,
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalPoint>,
    pub last_stats: Option<UpdateStats>,
}

impl TrainState {
    /// Fresh encoder and critic at the prior, with `decoder` in place.
    pub fn new(config: &TrainConfig, decoder: Decoder) -> Result<Self> {
        if let Err((key, msg)) = config.validate() {
            return Err(Error::Invalid(format!("{key}: {msg}")));
        }
        let spec = config.spec();
        if decoder.action_dim() != spec.action_dim {
            return Err(Error::Dimension(format!(
                "decoder action dim {} for {} ({})",
                decoder.action_dim(),
                spec.kind,
                spec.action_dim
            )));
        }
        let seed = config.seed;
        let mut enc_stream = RngStream::new(seed, STREAM_ENCODER_INIT);
        let mut critic_stream = RngStream::new(seed, STREAM_CRITIC_INIT);
        let head = GaussianHead::new(
            spec.obs_dim,
            spec.action_dim,
            &config.encoder_hidden,
            &mut enc_stream,
        )?;
        let critic = Critic::new(spec.obs_dim, &config.critic_hidden, &mut critic_stream)?;
        let optimizers = PpoOptimizers::new(&head, &critic, config.ppo.lr);
        Ok(Self {
            config: config.clone(),
            stage: 0,
            cumulative_steps: 0,
            collect_calls: 0,
            updates: 0,
            head,
            critic,
            decoder,
            normalizer: NormalizerState::new(spec.obs_dim),
            envs: VecEnv::new(spec, config.n_envs, seed, ENV_STREAM_BASE)?,
            optimizers,
            shuffle_stream: RngStream::new(seed, STREAM_SHUFFLE),
            decoder_init_stream: RngStream::new(seed, STREAM_DECODER_INIT),
            decoder_stream: RngStream::new(seed, STREAM_DECODER_TRAIN),
            reinit_stream: RngStream::new(seed, STREAM_REINIT),
            critic_stream,
            returns: ReturnWindow::new(config.n_envs),
            decoder_loss: f64::NAN,
            decoder_histories: Vec::new(),
            stage_buffers: Vec::new(),
            history_buffers: Vec::new(),
            metrics: Vec::new(),
            evals: Vec::new(),
            last_stats: None,
        })
    }

    pub fn policy(&self) -> ComposedPolicy<'_> {
        ComposedPolicy {
            head: &self.head,
            critic: &self.critic,
            decoder: &self.decoder,
        }
    }

    pub fn evaluate(&self, episodes: usize) -> Result<f64> {
        evaluate(
            &self.policy(),
            self.config.spec(),
            &self.normalizer,
            episodes,
            self.config.seed,
        )
    }

    pub fn encoder_fingerprint(&self) -> u64 {
        fingerprint(self.head.params())
    }

    pub fn decoder_fingerprint(&self) -> u64 {
        fingerprint(self.decoder.params())
    }

    /// Phase 1: collect and update until `budget` steps are consumed.
    /// Returns the number of collect calls made.
    pub fn encoder_phase(&mut self, budget: usize, obs: &mut dyn TrainObserver) -> Result<usize> {
        let per = self.config.steps_per_rollout();
        let calls = budget / per;
        let frozen = self.decoder_fingerprint();
        self.stage_buffers.clear();
        for _ in 0..calls {
            let buffer = {
                let policy = ComposedPolicy {
                    head: &self.head,
                    critic: &self.critic,
                    decoder: &self.decoder,
                };
                collect_rollouts(
                    &policy,
                    &mut self.envs,
                    &mut self.normalizer,
                    self.config.ppo.horizon,
                    true,
                )?
            };
            self.collect_calls += 1;
            self.cumulative_steps += per;
            self.returns.extend(&buffer.episode_returns);
            let stats = encoder_update(
                &mut self.head,
                &mut self.critic,
                &mut self.optimizers,
                &buffer,
                &self.config.ppo,
                &mut self.shuffle_stream,
            )?;
            self.updates += 1;
            self.last_stats = Some(stats);
            let row = MetricsRow::from_update(
                self.cumulative_steps,
                self.returns.mean(),
                &stats,
                self.decoder_loss,
                self.stage,
            );
            self.metrics.push(row);
            obs.on_update(&row)?;
            if self.config.eval_every > 0 && self.updates.is_multiple_of(self.config.eval_every) {
                let r = self.evaluate(self.config.eval_episodes)?;
                self.evals.push(EvalPoint {
                    step: self.cumulative_steps,
                    stage: self.stage,
                    mean_return: r,
                });
            }
            match self.config.decoder_data {
                DecoderData::Latest => {
                    self.stage_buffers.clear();
                    self.stage_buffers.push(buffer);
                }
                DecoderData::Stage => self.stage_buffers.push(buffer),
                DecoderData::Cumulative => {
                    self.history_buffers.push(buffer.clone());
                    self.stage_buffers.push(buffer);
                }
            }
            obs.on_progress(self)?;
        }
        if self.decoder_fingerprint() != frozen {
            return Err(Error::Invalid(
                "decoder changed during the encoder phase".into(),
            ));
        }
        Ok(calls)
    }

    /// Decoder training set assembled from the configured rollouts.
    pub fn decoder_dataset(&self) -> Result<DecoderDataset> {
        let parts: &[RolloutBuffer] = match self.config.decoder_data {
            DecoderData::Cumulative => &self.history_buffers,
            _ => &self.stage_buffers,
        };
        if parts.is_empty() {
            return Err(Error::Empty(
                "decoder dataset (no rollouts were collected)".into(),
            ));
        }
        let mut states = parts[0].obs.clone();
        let mut targets = DecoderDataset::from_buffer(&parts[0]).targets;
        let mut scores = buffer_advantages(&parts[0], &self.config.ppo)?.raw_advantages;
        for p in &parts[1..] {
            states.push_rows(&p.obs)?;
            targets.push_rows(&DecoderDataset::from_buffer(p).targets)?;
            scores.extend(buffer_advantages(p, &self.config.ppo)?.raw_advantages);
        }
        let full = DecoderDataset { states, targets };
        if self.config.decoder_top_fraction >= 1.0 {
            return Ok(full);
        }
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let k = ((self.config.decoder_top_fraction * scores.len() as f64).ceil() as usize)
            .clamp(1, scores.len());
        let threshold = sorted[k - 1];
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= threshold).collect();
        Ok(DecoderDataset {
            states: full.states.select_rows(&idx),
            targets: full.targets.select_rows(&idx),
        })
    }

    /// Phase 2: refit the decoder with the encoder frozen.
    pub fn decoder_phase(&mut self, epochs: usize) -> Result<Vec<f64>> {
        let kind = self.config.decoder_kind;
        if epochs == 0 || kind == DecoderKind::Identity {
            return Ok(Vec::new());
        }
        let frozen = self.encoder_fingerprint();
        let data = self.decoder_dataset()?;
        if self.decoder.kind() != kind || self.config.decoder_from_scratch {
            let spec = self.config.spec();
            self.decoder = Decoder::build(
                kind,
                spec.obs_dim,
                spec.action_dim,
                &self.config.decoder_arch,
                &mut self.decoder_init_stream,
            )?;
        }
        let cfg = DecoderTrainConfig {
            epochs,
            ..self.config.decoder_train
        };
        let history = train_decoder(&mut self.decoder, &data, &cfg, &mut self.decoder_stream)?;
        if self.encoder_fingerprint() != frozen {
            return Err(Error::Invalid(
                "encoder changed during decoder refinement".into(),
            ));
        }
        if let Some(&last) = history.last() {
            self.decoder_loss = last;
        }
        self.decoder_histories.push(history.clone());
        Ok(history)
    }

    /// Stage-boundary resets before stage `m`'s encoder phase.
    pub fn begin_stage(&mut self, m: usize) -> Result<()> {
        self.stage = m;
        if self.config.plan.reinit_at(m) {
            self.head
                .reinit_to_prior(&mut self.reinit_stream, self.config.reinit_trunk);
            self.optimizers.actor = crate::mathcore::AdamState::new(
                self.head.params().len(),
                crate::mathcore::AdamConfig::with_lr(self.config.ppo.lr),
            );
        }
        if m > 0 && self.config.reset_critic {
            self.critic.net.reinitialize(&mut self.critic_stream);
            self.optimizers.critic = crate::mathcore::AdamState::new(
                self.critic.net.n_params(),
                crate::mathcore::AdamConfig::with_lr(self.config.ppo.lr),
            );
        }
        Ok(())
    }
}

/// Run stage `m`: boundary resets, the encoder phase, then (unless `m` is
/// the last stage) decoder refinement.
pub fn run_stage(state: &mut TrainState, m: usize, obs: &mut dyn TrainObserver) -> Result<()> {
    let plan = state.config.plan.clone();
    if m >= plan.n_stages() {
        return Err(Error::Invalid(format!(
            "stage {m} of a {}-stage plan",
            plan.n_stages()
        )));
    }
    if m < state.stage || (m == state.stage && state.collect_calls > 0 && m > 0) {
        return Err(Error::Invalid(format!("stage {m} has already run")));
    }
    state.begin_stage(m)?;
    state.encoder_phase(plan.budgets[m], obs)?;
    obs.on_stage_end(state)?;
    if m + 1 < plan.n_stages() {
        state.decoder_phase(plan.epochs_after(m))?;
    }
    Ok(())
}

/// Execute every stage of the plan, starting from the identity decoder.
pub fn run_training(config: &TrainConfig, obs: &mut dyn TrainObserver) -> Result<TrainState> {
    let spec = config.spec();
    let mut state = TrainState::new(config, Decoder::identity(spec.action_dim))?;
    for m in 0..config.plan.n_stages() {
        run_stage(&mut state, m, obs)?;
    }
    Ok(state)
}

/// Train a fresh encoder and critic for `budget` steps against a frozen decoder.
pub fn train_encoder_only(
    config: &TrainConfig,
    decoder: Decoder,
    budget: usize,
    obs: &mut dyn TrainObserver,
) -> Result<TrainState> {
    let mut state = TrainState::new(config, decoder)?;
    state.encoder_phase(budget, obs)?;
    obs.on_stage_end(&state)?;
    Ok(state)
}
