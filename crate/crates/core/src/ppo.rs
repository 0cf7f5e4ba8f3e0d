//! PPO in latent space: GAE, the clipped surrogate on latent likelihood
//! ratios, value regression, entropy bonus and the prior regularizer.

use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::encoder::{gaussian_entropy, kl_std_normal, l2_prior_penalty, GaussianHead};
use crate::envs::{scale_reward, ActBatch, PolicySampler, RolloutBuffer};
use crate::error::{Error, Result};
use crate::mathcore::{Activation, AdamConfig, AdamState, Matrix, Mlp, RngStream};
use crate::par;

/// Form of the encoder's pull toward `N(0, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPenalty {
    Kl,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub kl_beta: f64,
    pub prior_penalty: PriorPenalty,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub horizon: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.995,
            lambda: 0.95,
            value_coef: 0.25,
            entropy_coef: 0.01,
            kl_beta: 1e-3,
            prior_penalty: PriorPenalty::Kl,
            epochs: 16,
            minibatch: 1024,
            lr: 1e-3,
            horizon: 30,
        }
    }
}

impl PpoConfig {
    /// Name of the first violated constraint with a message.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let unit = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err((name, format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((name, format!("{name} must be >= 0, got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("lambda", self.lambda)?;
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(("clip", format!("clip must be > 0, got {}", self.clip)));
        }
        nonneg("value_coef", self.value_coef)?;
        nonneg("entropy_coef", self.entropy_coef)?;
        nonneg("kl_beta", self.kl_beta)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(("lr", format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("minibatch", self.minibatch),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return Err((name, format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    /// Normalized advantages.
    pub advantages: Vec<f64>,
    /// Advantages before normalization.
    pub raw_advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
}

/// Raw GAE advantages for one sequence ending at `bootstrap`.
pub fn gae_sequence(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if rewards.len() != values.len() || rewards.len() != terminals.len() {
        return Err(Error::Dimension(format!(
            "rewards {}, values {}, terminals {}",
            rewards.len(),
            values.len(),
            terminals.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        carry = delta + gamma * lambda * live * carry;
        adv[t] = carry;
    }
    Ok(adv)
}

/// `(x - mean) / (std + 1e-8)` with the population standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// GAE over one sequence followed by batch normalization.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageBatch> {
    let raw = gae_sequence(rewards, values, terminals, bootstrap, gamma, lambda)?;
    let returns = raw.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageBatch {
        advantages: normalize_advantages(&raw),
        raw_advantages: raw,
        returns,
        old_log_probs: Vec::new(),
        old_values: values.to_vec(),
    })
}

/// Per-environment GAE on scaled rewards, normalized over the whole buffer.
pub fn buffer_advantages(buffer: &RolloutBuffer, cfg: &PpoConfig) -> Result<AdvantageBatch> {
    if buffer.is_empty() {
        return Err(Error::Empty("rollout buffer".into()));
    }
    let h = buffer.horizon;
    let parts = par::map_indices(buffer.n_envs, |e| {
        let r: Vec<f64> = buffer.rewards[e * h..(e + 1) * h]
            .iter()
            .map(|&r| scale_reward(r))
            .collect();
        gae_sequence(
            &r,
            &buffer.values[e * h..(e + 1) * h],
            &buffer.terminals[e * h..(e + 1) * h],
            buffer.bootstrap_values[e],
            cfg.gamma,
            cfg.lambda,
        )
    });
    let mut raw = Vec::with_capacity(buffer.len());
    for p in parts {
        raw.extend(p?);
    }
    let returns = raw.iter().zip(&buffer.values).map(|(a, v)| a + v).collect();
    Ok(AdvantageBatch {
        advantages: normalize_advantages(&raw),
        raw_advantages: raw,
        returns,
        old_log_probs: buffer.log_probs.clone(),
        old_values: buffer.values.clone(),
    })
}

/// State-value network `V(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: Mlp,
}

impl Critic {
    pub fn new(obs_dim: usize, hidden: &[usize], stream: &mut RngStream) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(Self {
            net: Mlp::new(&dims, Activation::SiLU, Activation::Identity, stream)?,
        })
    }

    pub fn values(&self, obs: &Matrix) -> Result<Vec<f64>> {
        let v = self.net.predict(obs)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("critic output".into()));
        }
        Ok(v.into_data())
    }
}

/// A minibatch view for the surrogate.
#[derive(Debug, Clone)]
pub struct SurrogateBatch {
    pub obs: Matrix,
    pub latents: Matrix,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub old_log_probs: Vec<f64>,
}

impl SurrogateBatch {
    pub fn gather(buffer: &RolloutBuffer, adv: &AdvantageBatch, idx: &[usize]) -> Self {
        Self {
            obs: buffer.obs.select_rows(idx),
            latents: buffer.latents.select_rows(idx),
            advantages: idx.iter().map(|&i| adv.advantages[i]).collect(),
            returns: idx.iter().map(|&i| adv.returns[i]).collect(),
            old_log_probs: idx.iter().map(|&i| adv.old_log_probs[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateOutput {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub prior_penalty: f64,
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub head_grads: Vec<f64>,
    pub critic_grads: Vec<f64>,
}

/// Total PPO loss on a minibatch and its gradients for the head and critic.
pub fn ppo_surrogate(
    head: &GaussianHead,
    critic: &Critic,
    batch: &SurrogateBatch,
    cfg: &PpoConfig,
) -> Result<SurrogateOutput> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("surrogate minibatch".into()));
    }
    let d = head.latent_dim();
    let (out, tape) = head.forward(&batch.obs)?;
    let nf = n as f64;
    let mut dmean = vec![0.0; n * d];
    let mut dscale = vec![0.0; n * d];
    let (mut policy, mut entropy, mut penalty, mut ratio_sum, mut clipped) =
        (0.0, 0.0, 0.0, 0.0, 0usize);
    for i in 0..n {
        let (eps, mu, sig) = (batch.latents.row(i), out.mean.row(i), out.scale.row(i));
        let lp = crate::encoder::log_prob_unchecked(eps, mu, sig);
        let ratio = (lp - batch.old_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!("likelihood ratio of sample {i}")));
        }
        let a = batch.advantages[i];
        let r_clip = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let unclipped = ratio * a <= r_clip * a;
        policy -= (ratio * a).min(r_clip * a);
        ratio_sum += ratio;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        entropy += gaussian_entropy(sig);
        penalty += match cfg.prior_penalty {
            PriorPenalty::Kl => kl_std_normal(mu, sig),
            PriorPenalty::L2 => l2_prior_penalty(mu, sig),
        };
        let dlp = if unclipped { -a * ratio / nf } else { 0.0 };
        for k in 0..d {
            let (m, s) = (mu[k], sig[k]);
            let z = eps[k] - m;
            let j = i * d + k;
            dmean[j] = dlp * z / (s * s);
            dscale[j] = dlp * (z * z / (s * s * s) - 1.0 / s);
            dscale[j] -= cfg.entropy_coef / (nf * s);
            match cfg.prior_penalty {
                PriorPenalty::Kl => {
                    dmean[j] += cfg.kl_beta * m / nf;
                    dscale[j] += cfg.kl_beta * (s - 1.0 / s) / nf;
                }
                PriorPenalty::L2 => {
                    dmean[j] += cfg.kl_beta * m / nf;
                    dscale[j] += cfg.kl_beta * 2.0 * s.ln() / (s * nf);
                }
            }
        }
    }
    let head_grads = head
        .backward(
            &out,
            &tape,
            &Matrix::from_raw(n, d, dmean),
            &Matrix::from_raw(n, d, dscale),
        )?
        .params;

    let (v, vtape) = critic.net.forward(&batch.obs)?;
    let mut value_loss = 0.0;
    let dv: Vec<f64> = v
        .data()
        .iter()
        .zip(&batch.returns)
        .map(|(v, r)| {
            value_loss += (v - r).powi(2);
            2.0 * cfg.value_coef * (v - r) / nf
        })
        .collect();
    value_loss /= nf;
    let critic_grads = critic.net.backward(&vtape, &Matrix::from_raw(n, 1, dv))?.params;

    let policy_loss = policy / nf;
    let entropy = entropy / nf;
    let prior_penalty = penalty / nf;
    let loss = policy_loss - cfg.entropy_coef * entropy
        + cfg.kl_beta * prior_penalty
        + cfg.value_coef * value_loss;
    if !loss.is_finite() {
        return Err(Error::NonFinite("ppo loss".into()));
    }
    Ok(SurrogateOutput {
        loss,
        policy_loss,
        value_loss,
        entropy,
        prior_penalty,
        mean_ratio: ratio_sum / nf,
        clip_frac: clipped as f64 / nf,
        head_grads,
        critic_grads,
    })
}

/// Optimizer state of the actor and critic, kept across updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoOptimizers {
    pub actor: AdamState,
    pub critic: AdamState,
}

impl PpoOptimizers {
    pub fn new(head: &GaussianHead, critic: &Critic, lr: f64) -> Self {
        Self {
            actor: AdamState::new(head.params().len(), AdamConfig::with_lr(lr)),
            critic: AdamState::new(critic.net.n_params(), AdamConfig::with_lr(lr)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean ratio on the first minibatch (exactly 1).
    pub first_ratio: f64,
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    /// Post-update mean latent entropy over the buffer states.
    pub entropy: f64,
    /// Post-update mean KL to the prior over the buffer states.
    pub kl_to_prior: f64,
}

/// Minibatched PPO epochs on the encoder and critic. The decoder takes no
/// part: only the stored latents and their log-probabilities are used.
pub fn encoder_update(
    head: &mut GaussianHead,
    critic: &mut Critic,
    opt: &mut PpoOptimizers,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    stream: &mut RngStream,
) -> Result<UpdateStats> {
    let adv = buffer_advantages(buffer, cfg)?;
    let n = buffer.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut acc = UpdateStats {
        first_ratio: f64::NAN,
        mean_ratio: 0.0,
        clip_frac: 0.0,
        value_loss: 0.0,
        policy_loss: 0.0,
        entropy: 0.0,
        kl_to_prior: 0.0,
    };
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        stream.shuffle(&mut order);
        for idx in order.chunks(cfg.minibatch) {
            let batch = SurrogateBatch::gather(buffer, &adv, idx);
            let out = ppo_surrogate(head, critic, &batch, cfg)?;
            if steps == 0 {
                acc.first_ratio = out.mean_ratio;
            }
            opt.actor.step(head.params_mut(), &out.head_grads)?;
            opt.critic.step(critic.net.params_mut(), &out.critic_grads)?;
            acc.mean_ratio += out.mean_ratio;
            acc.clip_frac += out.clip_frac;
            acc.value_loss += out.value_loss;
            acc.policy_loss += out.policy_loss;
            steps += 1;
        }
    }
    let s = steps as f64;
    acc.mean_ratio /= s;
    acc.clip_frac /= s;
    acc.value_loss /= s;
    acc.policy_loss /= s;
    let dist = head.distribution(&buffer.obs)?;
    for i in 0..n {
        acc.entropy += gaussian_entropy(dist.scale.row(i));
        acc.kl_to_prior += kl_std_normal(dist.mean.row(i), dist.scale.row(i));
    }
    acc.entropy /= n as f64;
    acc.kl_to_prior /= n as f64;
    Ok(acc)
}

/// The composite policy `a = g(s, eps)`, `eps ~ pi(. | s)`, with its critic.
#[derive(Debug, Clone, Copy)]
pub struct ComposedPolicy<'a> {
    pub head: &'a GaussianHead,
    pub critic: &'a Critic,
    pub decoder: &'a Decoder,
}

impl PolicySampler for ComposedPolicy<'_> {
    fn act(&self, obs: &Matrix, streams: &mut [RngStream]) -> Result<ActBatch> {
        let (latents, log_probs, _) = self.head.sample_batch(obs, streams)?;
        let actions = self.decoder.decode_batch(obs, &latents, streams)?;
        Ok(ActBatch {
            latents,
            log_probs,
            actions,
        })
    }

    fn values(&self, obs: &Matrix) -> Result<Vec<f64>> {
        self.critic.values(obs)
    }
}
