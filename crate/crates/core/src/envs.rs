//! Toy continuous-control tasks with multimodal optima, observation
//! normalization, reward scaling and vectorized rollout collection.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream};
use crate::par;

/// Constant factor applied to every environment reward before learning.
pub const REWARD_SCALE: f64 = 10.0;

/// Variance floor used by [`NormalizerState::normalize`].
pub const NORM_EPS: f64 = 1e-8;

/// Point-mass dynamics: position gain, velocity decay, action gain.
pub const POINT_MASS_DT: f64 = 0.05;
pub const POINT_MASS_DECAY: f64 = 0.9;
pub const POINT_MASS_GAIN: f64 = 0.1;
/// Sharpness of the goal reward `exp(-k * dist^2)`.
pub const GOAL_SHARPNESS: f64 = 8.0;
pub const GOALS: [[f64; 2]; 2] = [[0.8, 0.0], [-0.8, 0.0]];

/// Bandit modes sit at `±BANDIT_MODE_SLOPE * context`.
pub const BANDIT_MODE_SLOPE: f64 = 0.7;

const PENDULUM_G: f64 = 10.0;
const PENDULUM_DT: f64 = 0.05;
const PENDULUM_MAX_SPEED: f64 = 8.0;
const PENDULUM_MAX_TORQUE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    TwoGoalPointMass,
    PendulumSwingUp,
    BimodalBandit,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [
        EnvKind::TwoGoalPointMass,
        EnvKind::PendulumSwingUp,
        EnvKind::BimodalBandit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TwoGoalPointMass => "TwoGoalPointMass",
            EnvKind::PendulumSwingUp => "PendulumSwingUp",
            EnvKind::BimodalBandit => "BimodalBandit",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown environment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub episode_length: usize,
}

impl EnvSpec {
    /// Spec with the task's default episode length.
    pub fn new(kind: EnvKind) -> Self {
        let (obs_dim, action_dim, episode_length) = match kind {
            EnvKind::TwoGoalPointMass => (4, 2, 60),
            EnvKind::PendulumSwingUp => (3, 1, 200),
            EnvKind::BimodalBandit => (1, 1, 1),
        };
        Self {
            kind,
            obs_dim,
            action_dim,
            episode_length,
        }
    }

    pub fn with_episode_length(mut self, episode_length: usize) -> Result<Self> {
        if episode_length == 0 {
            return Err(Error::Invalid("episode_length must be >= 1".into()));
        }
        self.episode_length = episode_length;
        Ok(self)
    }
}

/// Physical state of one environment instance plus its step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Point mass: (x, y, vx, vy). Pendulum: (angle, angular velocity).
    /// Bandit: (context).
    pub physical: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    /// Observation vector exposed to the agent.
    pub fn observe(&self, spec: &EnvSpec) -> Vec<f64> {
        match spec.kind {
            EnvKind::PendulumSwingUp => {
                let (th, om) = (self.physical[0], self.physical[1]);
                vec![th.cos(), th.sin(), om]
            }
            _ => self.physical.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub terminal: bool,
}

pub fn env_reset(spec: &EnvSpec, stream: &mut RngStream) -> EnvState {
    let physical = match spec.kind {
        EnvKind::TwoGoalPointMass => {
            let x = stream.uniform_range(-0.1, 0.1);
            let y = stream.uniform_range(-0.1, 0.1);
            vec![x, y, 0.0, 0.0]
        }
        EnvKind::PendulumSwingUp => vec![stream.uniform_range(-PI, PI), 0.0],
        EnvKind::BimodalBandit => vec![stream.uniform_range(-1.0, 1.0)],
    };
    EnvState { physical, t: 0 }
}

/// Goal reward of the two-goal point mass at `pos`.
pub fn two_goal_reward(pos: [f64; 2]) -> f64 {
    GOALS
        .iter()
        .map(|g| {
            let d2 = (pos[0] - g[0]).powi(2) + (pos[1] - g[1]).powi(2);
            (-GOAL_SHARPNESS * d2).exp()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Bandit reward for action `a` in context `c`.
pub fn bandit_reward(c: f64, a: f64) -> f64 {
    let m = BANDIT_MODE_SLOPE * c;
    (-GOAL_SHARPNESS * (a - m).powi(2)).exp() + (-GOAL_SHARPNESS * (a + m).powi(2)).exp()
}

fn wrap_angle(th: f64) -> f64 {
    let mut a = (th + PI).rem_euclid(2.0 * PI) - PI;
    if a < -PI {
        a += 2.0 * PI;
    }
    a
}

pub fn env_step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
    if action.len() != spec.action_dim {
        return Err(Error::Dimension(format!(
            "{} expects {} action dims, got {}",
            spec.kind,
            spec.action_dim,
            action.len()
        )));
    }
    if !state.physical.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("{} state", spec.kind)));
    }
    let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let p = &state.physical;
    let (physical, reward) = match spec.kind {
        EnvKind::TwoGoalPointMass => {
            let pos = [p[0] + POINT_MASS_DT * p[2], p[1] + POINT_MASS_DT * p[3]];
            let vel = [
                POINT_MASS_DECAY * p[2] + POINT_MASS_GAIN * a[0],
                POINT_MASS_DECAY * p[3] + POINT_MASS_GAIN * a[1],
            ];
            (vec![pos[0], pos[1], vel[0], vel[1]], two_goal_reward(pos))
        }
        EnvKind::PendulumSwingUp => {
            let (th, om) = (p[0], p[1]);
            let u = PENDULUM_MAX_TORQUE * a[0];
            let reward = -(wrap_angle(th).powi(2) + 0.1 * om * om + 0.001 * u * u);
            let om2 = (om + (1.5 * PENDULUM_G * th.sin() + 3.0 * u) * PENDULUM_DT)
                .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
            (vec![th + om2 * PENDULUM_DT, om2], reward)
        }
        EnvKind::BimodalBandit => (p.clone(), bandit_reward(p[0], a[0])),
    };
    if !reward.is_finite() || !physical.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("{} transition", spec.kind)));
    }
    let t = state.t + 1;
    Ok(StepOutcome {
        next: EnvState { physical, t },
        reward,
        terminal: t >= spec.episode_length,
    })
}

pub fn scale_reward(r: f64) -> f64 {
    REWARD_SCALE * r
}

/// Running observation statistics (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl NormalizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, obs: &[f64]) {
        self.count += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(obs) {
            let delta = x - *m;
            *m += delta / self.count;
            *s += delta * (x - *m);
        }
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|s| (s / self.count).max(0.0)).collect()
    }

    /// `(obs - mean) / sqrt(var + eps)` with the current statistics.
    /// Before any update the observation passes through unchanged.
    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        if self.count == 0.0 {
            return obs.to_vec();
        }
        obs.iter()
            .zip(&self.mean)
            .zip(&self.m2)
            .map(|((&x, &m), &s)| (x - m) / ((s / self.count).max(0.0) + NORM_EPS).sqrt())
            .collect()
    }

    pub fn normalize_rows(&self, raw: &Matrix) -> Matrix {
        let mut out = Vec::with_capacity(raw.data().len());
        for i in 0..raw.rows() {
            out.extend(self.normalize(raw.row(i)));
        }
        Matrix::from_raw(raw.rows(), raw.cols(), out)
    }
}

/// Normalize `obs`, first folding it into the statistics when `training`.
pub fn normalize_obs(norm: &mut NormalizerState, obs: &[f64], training: bool) -> Vec<f64> {
    if training {
        norm.update(obs);
    }
    norm.normalize(obs)
}

/// Output of a policy for a batch of normalized observations.
#[derive(Debug, Clone)]
pub struct ActBatch {
    pub latents: Matrix,
    pub log_probs: Vec<f64>,
    pub actions: Matrix,
}

/// A stochastic policy that draws latents, decodes actions and scores states.
pub trait PolicySampler: Sync {
    /// One row per observation; row `i` draws only from `streams[i]`.
    fn act(&self, obs: &Matrix, streams: &mut [RngStream]) -> Result<ActBatch>;
    fn values(&self, obs: &Matrix) -> Result<Vec<f64>>;
}

/// One recorded environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs: Vec<f64>,
    pub latent: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub value: f64,
    pub log_prob: f64,
}

/// On-policy transitions stored env-major: index `env * horizon + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    /// Raw observations before normalization.
    pub states: Matrix,
    /// Normalized observations seen by the policy.
    pub obs: Matrix,
    pub latents: Matrix,
    /// Post-squash actions.
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminals: Vec<bool>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Critic value of each env's state after the last step.
    pub bootstrap_values: Vec<f64>,
    /// Undiscounted raw returns of episodes finished during collection,
    /// ordered by (env, step).
    pub episode_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn index(&self, env: usize, t: usize) -> usize {
        env * self.horizon + t
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            state: self.states.row(i).to_vec(),
            obs: self.obs.row(i).to_vec(),
            latent: self.latents.row(i).to_vec(),
            action: self.actions.row(i).to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states.row(i).to_vec(),
            terminal: self.terminals[i],
            value: self.values[i],
            log_prob: self.log_probs[i],
        }
    }

    /// Mean return of the episodes completed in this buffer, if any.
    pub fn mean_episode_return(&self) -> Option<f64> {
        if self.episode_returns.is_empty() {
            None
        } else {
            Some(self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64)
        }
    }

    /// Concatenate buffers with the same horizon layout into one dataset.
    /// Only the per-transition arrays are meaningful on the result.
    pub fn concat(parts: &[RolloutBuffer]) -> Result<RolloutBuffer> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("no rollout buffers to concatenate".into()))?;
        let mut out = first.clone();
        for p in &parts[1..] {
            out.states.push_rows(&p.states)?;
            out.obs.push_rows(&p.obs)?;
            out.latents.push_rows(&p.latents)?;
            out.actions.push_rows(&p.actions)?;
            out.next_states.push_rows(&p.next_states)?;
            out.rewards.extend_from_slice(&p.rewards);
            out.terminals.extend_from_slice(&p.terminals);
            out.values.extend_from_slice(&p.values);
            out.log_probs.extend_from_slice(&p.log_probs);
            out.bootstrap_values.extend_from_slice(&p.bootstrap_values);
            out.episode_returns.extend_from_slice(&p.episode_returns);
            out.n_envs += p.n_envs;
        }
        Ok(out)
    }
}

/// Base stream id for per-environment random streams.
pub const ENV_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone)]
struct EnvSlot {
    state: EnvState,
    stream: RngStream,
    running_return: f64,
}

/// A fixed set of environment instances that persist across rollouts.
#[derive(Debug, Clone)]
pub struct VecEnv {
    spec: EnvSpec,
    slots: Vec<EnvSlot>,
}

/// Snapshot of a [`VecEnv`] for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecEnvSnapshot {
    pub states: Vec<EnvState>,
    pub streams: Vec<crate::mathcore::RngSnapshot>,
    pub running_returns: Vec<f64>,
}

impl VecEnv {
    /// `n_envs` instances; instance `i` owns stream `stream_base + i` of `seed`.
    pub fn new(spec: EnvSpec, n_envs: usize, seed: u64, stream_base: u64) -> Result<Self> {
        if n_envs == 0 {
            return Err(Error::Invalid("n_envs must be >= 1".into()));
        }
        let slots = (0..n_envs)
            .map(|i| {
                let mut stream = RngStream::new(seed, stream_base + i as u64);
                let state = env_reset(&spec, &mut stream);
                EnvSlot {
                    state,
                    stream,
                    running_return: 0.0,
                }
            })
            .collect();
        Ok(Self { spec, slots })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn n_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn raw_observations(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.slots.len() * self.spec.obs_dim);
        for s in &self.slots {
            data.extend(s.state.observe(&self.spec));
        }
        Matrix::from_raw(self.slots.len(), self.spec.obs_dim, data)
    }

    pub fn snapshot(&self) -> VecEnvSnapshot {
        VecEnvSnapshot {
            states: self.slots.iter().map(|s| s.state.clone()).collect(),
            streams: self.slots.iter().map(|s| s.stream.snapshot()).collect(),
            running_returns: self.slots.iter().map(|s| s.running_return).collect(),
        }
    }

    pub fn restore(spec: EnvSpec, snap: &VecEnvSnapshot) -> Result<Self> {
        if snap.states.len() != snap.streams.len()
            || snap.states.len() != snap.running_returns.len()
            || snap.states.is_empty()
        {
            return Err(Error::Dimension("inconsistent environment snapshot".into()));
        }
        let slots = snap
            .states
            .iter()
            .zip(&snap.streams)
            .zip(&snap.running_returns)
            .map(|((st, sn), &r)| EnvSlot {
                state: st.clone(),
                stream: RngStream::restore(sn),
                running_return: r,
            })
            .collect();
        Ok(Self { spec, slots })
    }
}

/// Run every instance for `horizon` steps under `sampler`.
///
/// Each step is synchronous across instances: observations are folded into
/// the normalizer in instance order (when `training`), the policy acts on the
/// whole batch, then instances advance in parallel with their own streams.
pub fn collect_rollouts<P: PolicySampler + ?Sized>(
    sampler: &P,
    envs: &mut VecEnv,
    normalizer: &mut NormalizerState,
    horizon: usize,
    training: bool,
) -> Result<RolloutBuffer> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be >= 1".into()));
    }
    let spec = envs.spec;
    let n = envs.n_envs();
    let total = n * horizon;
    let mut states = vec![0.0; total * spec.obs_dim];
    let mut obs = vec![0.0; total * spec.obs_dim];
    let mut next_states = vec![0.0; total * spec.obs_dim];
    let mut actions = vec![0.0; total * spec.action_dim];
    let mut latents: Vec<f64> = Vec::new();
    let mut latent_dim = 0;
    let mut rewards = vec![0.0; total];
    let mut terminals = vec![false; total];
    let mut values = vec![0.0; total];
    let mut log_probs = vec![0.0; total];
    let mut finished: Vec<Vec<f64>> = vec![Vec::new(); n];

    for t in 0..horizon {
        let raw = envs.raw_observations();
        if training {
            for i in 0..n {
                normalizer.update(raw.row(i));
            }
        }
        let normed = normalizer.normalize_rows(&raw);
        let mut streams: Vec<RngStream> = envs.slots.iter().map(|s| s.stream.clone()).collect();
        let act = sampler.act(&normed, &mut streams)?;
        let vals = sampler.values(&normed)?;
        if !act.actions.is_finite() {
            return Err(Error::NonFinite("sampler produced non-finite action".into()));
        }
        if act.actions.cols() != spec.action_dim || act.actions.rows() != n {
            return Err(Error::Dimension("sampler action batch shape".into()));
        }
        if t == 0 {
            latent_dim = act.latents.cols();
            latents = vec![0.0; total * latent_dim];
        }
        for (slot, s) in envs.slots.iter_mut().zip(streams) {
            slot.stream = s;
        }
        let outcomes = par::zip_map_mut(
            &mut envs.slots,
            &mut finished,
            |i, slot, done| -> Result<Vec<f64>> {
                let a = act.actions.row(i);
                let out = env_step(&spec, &slot.state, a)?;
                slot.running_return += out.reward;
                let next_obs = out.next.observe(&spec);
                if out.terminal {
                    done.push(slot.running_return);
                    slot.running_return = 0.0;
                    slot.state = env_reset(&spec, &mut slot.stream);
                } else {
                    slot.state = out.next;
                }
                let mut rec = next_obs;
                rec.push(out.reward);
                rec.push(if out.terminal { 1.0 } else { 0.0 });
                Ok(rec)
            },
        );
        let od = spec.obs_dim;
        let ad = spec.action_dim;
        for (i, rec) in outcomes.into_iter().enumerate() {
            let rec = rec?;
            let k = i * horizon + t;
            states[k * od..(k + 1) * od].copy_from_slice(raw.row(i));
            obs[k * od..(k + 1) * od].copy_from_slice(normed.row(i));
            next_states[k * od..(k + 1) * od].copy_from_slice(&rec[..od]);
            actions[k * ad..(k + 1) * ad].copy_from_slice(act.actions.row(i));
            latents[k * latent_dim..(k + 1) * latent_dim].copy_from_slice(act.latents.row(i));
            rewards[k] = rec[od];
            terminals[k] = rec[od + 1] != 0.0;
            values[k] = vals[i];
            log_probs[k] = act.log_probs[i];
        }
    }
    let final_obs = normalizer.normalize_rows(&envs.raw_observations());
    let bootstrap_values = sampler.values(&final_obs)?;
    Ok(RolloutBuffer {
        n_envs: n,
        horizon,
        states: Matrix::from_raw(total, spec.obs_dim, states),
        obs: Matrix::from_raw(total, spec.obs_dim, obs),
        latents: Matrix::from_raw(total, latent_dim, latents),
        actions: Matrix::from_raw(total, spec.action_dim, actions),
        rewards,
        next_states: Matrix::from_raw(total, spec.obs_dim, next_states),
        terminals,
        values,
        log_probs,
        bootstrap_values,
        episode_returns: finished.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_reset_is_deterministic() {
        let spec = EnvSpec::new(EnvKind::BimodalBandit);
        let a = env_reset(&spec, &mut RngStream::new(3, 1));
        let b = env_reset(&spec, &mut RngStream::new(3, 1));
        assert_eq!(a, b);
        assert!(a.physical[0].abs() <= 1.0);
    }

    #[test]
    fn point_mass_reset_at_rest() {
        let spec = EnvSpec::new(EnvKind::TwoGoalPointMass);
        let mut s = RngStream::new(0, 0);
        for _ in 0..100 {
            let st = env_reset(&spec, &mut s);
            assert_eq!(st.physical[2], 0.0);
            assert_eq!(st.physical[3], 0.0);
            assert!(st.physical[0].abs() <= 0.1 && st.physical[1].abs() <= 0.1);
        }
    }

    #[test]
    fn reset_position_mean_near_zero() {
        let spec = EnvSpec::new(EnvKind::TwoGoalPointMass);
        let mut s = RngStream::new(21, 0);
        let n = 10_000;
        let (mut mx, mut my) = (0.0, 0.0);
        for _ in 0..n {
            let st = env_reset(&spec, &mut s);
            mx += st.physical[0];
            my += st.physical[1];
        }
        assert!((mx / n as f64).abs() < 0.01);
        assert!((my / n as f64).abs() < 0.01);
    }

    #[test]
    fn pendulum_reset_range() {
        let spec = EnvSpec::new(EnvKind::PendulumSwingUp);
        let mut s = RngStream::new(0, 0);
        for _ in 0..100 {
            let st = env_reset(&spec, &mut s);
            assert!(st.physical[0].abs() <= PI && st.physical[1] == 0.0);
        }
    }

    #[test]
    fn point_mass_rest_stays_put() {
        let spec = EnvSpec::new(EnvKind::TwoGoalPointMass);
        let st = EnvState {
            physical: vec![0.03, -0.02, 0.0, 0.0],
            t: 0,
        };
        let out = env_step(&spec, &st, &[0.0, 0.0]).unwrap();
        assert_eq!(&out.next.physical[..2], &[0.03, -0.02]);
        assert!(!out.terminal);
    }

    #[test]
    fn point_mass_goal_reward_is_one() {
        let spec = EnvSpec::new(EnvKind::TwoGoalPointMass);
        let st = EnvState {
            physical: vec![0.8, 0.0, 0.0, 0.0],
            t: 5,
        };
        let out = env_step(&spec, &st, &[0.0, 0.0]).unwrap();
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn point_mass_terminates_at_episode_length() {
        let spec = EnvSpec::new(EnvKind::TwoGoalPointMass)
            .with_episode_length(3)
            .unwrap();
        let mut st = env_reset(&spec, &mut RngStream::new(0, 0));
        let mut terms = vec![];
        for _ in 0..3 {
            let out = env_step(&spec, &st, &[1.0, 1.0]).unwrap();
            terms.push(out.terminal);
            st = out.next;
        }
        assert_eq!(terms, vec![false, false, true]);
        assert!(EnvSpec::new(EnvKind::BimodalBandit)
            .with_episode_length(0)
            .is_err());
    }

    #[test]
    fn bandit_modes_symmetric() {
        let spec = EnvSpec::new(EnvKind::BimodalBandit);
        let st = EnvState {
            physical: vec![1.0],
            t: 0,
        };
        let up = env_step(&spec, &st, &[0.7]).unwrap();
        let down = env_step(&spec, &st, &[-0.7]).unwrap();
        assert!((up.reward - down.reward).abs() < 1e-12);
        assert!(up.terminal);
    }

    fn grid_argmaxes(c: f64) -> Vec<f64> {
        let n = 10_001;
        let grid: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let r: Vec<f64> = grid.iter().map(|&a| bandit_reward(c, a)).collect();
        let best = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        grid.iter()
            .zip(&r)
            .filter(|(_, &v)| v > best - 1e-9)
            .map(|(&a, _)| a)
            .collect()
    }

    #[test]
    fn bandit_optimum_is_bimodal_on_grid() {
        // Two symmetric global maxima once the bumps separate (|c| > 0.357),
        // converging to ±0.7c as they move apart.
        for &c in &[0.5, 0.7, 0.8, 1.0, -0.9] {
            let argmaxes = grid_argmaxes(c);
            let pos: Vec<_> = argmaxes.iter().filter(|a| **a > 0.0).collect();
            let neg: Vec<_> = argmaxes.iter().filter(|a| **a < 0.0).collect();
            assert!(!pos.is_empty() && !neg.is_empty(), "c={c}");
            assert!((pos[0] + neg[neg.len() - 1]).abs() < 1e-9);
            if c.abs() >= 0.8 {
                for a in &argmaxes {
                    assert!((a.abs() - 0.7 * c.abs()).abs() < 0.01, "c={c} a={a}");
                }
            }
        }
        for &c in &[0.0, 0.2, -0.3] {
            assert_eq!(grid_argmaxes(c), vec![0.0], "c={c}");
        }
    }

    #[test]
    fn non_finite_state_rejected() {
        let spec = EnvSpec::new(EnvKind::PendulumSwingUp);
        let st = EnvState {
            physical: vec![f64::NAN, 0.0],
            t: 0,
        };
        assert!(matches!(
            env_step(&spec, &st, &[0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn pendulum_reward_at_top_is_zero() {
        let spec = EnvSpec::new(EnvKind::PendulumSwingUp);
        let st = EnvState {
            physical: vec![0.0, 0.0],
            t: 0,
        };
        let out = env_step(&spec, &st, &[0.0]).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.next.physical, vec![0.0, 0.0]);
    }

    #[test]
    fn reward_scaling() {
        assert_eq!(scale_reward(0.0), 0.0);
        assert_eq!(scale_reward(1.0), 10.0);
        assert_eq!(scale_reward(-0.25), -2.5);
    }

    #[test]
    fn normalizer_first_obs_is_zero() {
        let mut n = NormalizerState::new(2);
        assert_eq!(normalize_obs(&mut n, &[3.0, -1.0], true), vec![0.0, 0.0]);
    }

    #[test]
    fn normalizer_constant_stream_goes_to_zero() {
        let mut n = NormalizerState::new(1);
        for _ in 0..100 {
            let v = normalize_obs(&mut n, &[5.0], true);
            assert_eq!(v, vec![0.0]);
        }
    }

    #[test]
    fn normalizer_alternating_stats() {
        let mut n = NormalizerState::new(1);
        for i in 0..1000 {
            n.update(&[if i % 2 == 0 { 1.0 } else { 3.0 }]);
        }
        assert!((n.mean[0] - 2.0).abs() < 1e-3);
        assert!((n.variance()[0].sqrt() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let mut s = RngStream::new(8, 0);
        let mut n = NormalizerState::new(3);
        let mut hist: Vec<Vec<f64>> = vec![];
        for _ in 0..5000 {
            let x = vec![s.normal() * 3.0 + 1.0, s.uniform(), 100.0 + s.normal()];
            n.update(&x);
            hist.push(x);
        }
        for d in 0..3 {
            let mean = hist.iter().map(|x| x[d]).sum::<f64>() / hist.len() as f64;
            let var = hist.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / hist.len() as f64;
            assert!((n.mean[d] - mean).abs() < 1e-10);
            assert!((n.variance()[d] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn env_names_parse() {
        assert_eq!(
            "bimodalbandit".parse::<EnvKind>().unwrap(),
            EnvKind::BimodalBandit
        );
        assert!("Cartpole".parse::<EnvKind>().is_err());
    }
}
