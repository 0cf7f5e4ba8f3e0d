//! Plain Gaussian PPO: a tanh-squashed diagonal Gaussian acting directly on
//! actions, trained with the same rollout and update primitives.

use crate::encoder::GaussianHead;
use crate::envs::{collect_rollouts, ActBatch, NormalizerState, PolicySampler, VecEnv, ENV_STREAM_BASE};
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream};
use crate::ppo::{encoder_update, Critic, PpoOptimizers};
use crate::scheduler::{
    evaluate, MetricsRow, ReturnWindow, TrainConfig, TrainObserver, STREAM_CRITIC_INIT,
    STREAM_ENCODER_INIT, STREAM_SHUFFLE,
};

/// `a = tanh(u)`, `u ~ N(mean(s), diag(scale(s)^2))`.
#[derive(Debug, Clone, Copy)]
pub struct TanhGaussian<'a> {
    pub head: &'a GaussianHead,
    pub critic: &'a Critic,
}

impl PolicySampler for TanhGaussian<'_> {
    fn act(&self, obs: &Matrix, streams: &mut [RngStream]) -> Result<ActBatch> {
        let (pre, log_probs, _) = self.head.sample_batch(obs, streams)?;
        let actions = pre.map(f64::tanh);
        Ok(ActBatch {
            latents: pre,
            log_probs,
            actions,
        })
    }

    fn values(&self, obs: &Matrix) -> Result<Vec<f64>> {
        self.critic.values(obs)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPpo {
    pub config: TrainConfig,
    pub head: GaussianHead,
    pub critic: Critic,
    pub normalizer: NormalizerState,
    pub envs: VecEnv,
    pub optimizers: PpoOptimizers,
    pub shuffle_stream: RngStream,
    pub returns: ReturnWindow,
    pub steps: usize,
    pub metrics: Vec<MetricsRow>,
}

impl GaussianPpo {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        if let Err((key, msg)) = config.validate() {
            return Err(Error::Invalid(format!("{key}: {msg}")));
        }
        let spec = config.spec();
        let seed = config.seed;
        let head = GaussianHead::new(
            spec.obs_dim,
            spec.action_dim,
            &config.encoder_hidden,
            &mut RngStream::new(seed, STREAM_ENCODER_INIT),
        )?;
        let critic = Critic::new(
            spec.obs_dim,
            &config.critic_hidden,
            &mut RngStream::new(seed, STREAM_CRITIC_INIT),
        )?;
        Ok(Self {
            optimizers: PpoOptimizers::new(&head, &critic, config.ppo.lr),
            head,
            critic,
            normalizer: NormalizerState::new(spec.obs_dim),
            envs: VecEnv::new(spec, config.n_envs, seed, ENV_STREAM_BASE)?,
            shuffle_stream: RngStream::new(seed, STREAM_SHUFFLE),
            returns: ReturnWindow::new(config.n_envs),
            steps: 0,
            metrics: Vec::new(),
            config: config.clone(),
        })
    }

    pub fn policy(&self) -> TanhGaussian<'_> {
        TanhGaussian {
            head: &self.head,
            critic: &self.critic,
        }
    }

    /// One rollout followed by one PPO update.
    pub fn iterate(&mut self) -> Result<MetricsRow> {
        let buffer = collect_rollouts(
            &TanhGaussian {
                head: &self.head,
                critic: &self.critic,
            },
            &mut self.envs,
            &mut self.normalizer,
            self.config.ppo.horizon,
            true,
        )?;
        self.steps += buffer.len();
        self.returns.extend(&buffer.episode_returns);
        let stats = encoder_update(
            &mut self.head,
            &mut self.critic,
            &mut self.optimizers,
            &buffer,
            &self.config.ppo,
            &mut self.shuffle_stream,
        )?;
        let row = MetricsRow::from_update(self.steps, self.returns.mean(), &stats, f64::NAN, 0);
        self.metrics.push(row);
        Ok(row)
    }

    /// Run updates until `budget` environment steps are consumed.
    pub fn train(&mut self, budget: usize, obs: &mut dyn TrainObserver) -> Result<()> {
        let per = self.config.steps_per_rollout();
        for _ in 0..budget / per {
            let row = self.iterate()?;
            obs.on_update(&row)?;
        }
        Ok(())
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
}
