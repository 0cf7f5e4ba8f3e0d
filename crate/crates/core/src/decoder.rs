//! Transport maps `g(s, eps)` from latents to actions: exact tanh identity,
//! conditional flow matching integrated with Euler steps, and a DDPM reverse
//! chain seeded at the latent. All outputs are squashed by tanh.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::RolloutBuffer;
use crate::error::{Error, Result};
use crate::mathcore::{Activation, AdamConfig, AdamState, Matrix, Mlp, RngStream};

/// Regression targets are `atanh` of actions clipped to this magnitude.
pub const ATANH_CLIP: f64 = 1.0 - 1e-6;

/// Offset of the cosine noise schedule.
pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    Identity,
    FlowMatching,
    Diffusion,
}

impl DecoderKind {
    pub fn tag(self) -> &'static str {
        match self {
            DecoderKind::Identity => "identity",
            DecoderKind::FlowMatching => "fm",
            DecoderKind::Diffusion => "diffusion",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(DecoderKind::Identity),
            "fm" | "flow" | "flow_matching" => Ok(DecoderKind::FlowMatching),
            "diffusion" | "diff" | "ddpm" => Ok(DecoderKind::Diffusion),
            _ => Err(Error::Invalid(format!("unknown decoder kind '{s}'"))),
        }
    }
}

/// `[t, sin(2 pi k t), cos(2 pi k t) for k = 1..=frequencies]`.
pub fn time_embedding(t: f64, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(1 + 2 * frequencies);
    out.push(t);
    for k in 1..=frequencies {
        let w = 2.0 * PI * k as f64 * t;
        out.push(w.sin());
        out.push(w.cos());
    }
    out
}

/// An MLP over `[state | x | time embedding]` producing an `action_dim` vector.
/// Serves both as the flow-matching velocity field and the noise predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalNet {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub time_frequencies: usize,
}

pub type VelocityNet = ConditionalNet;
pub type NoisePredictor = ConditionalNet;

impl ConditionalNet {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        time_frequencies: usize,
        stream: &mut RngStream,
    ) -> Result<Self> {
        let mut dims = vec![state_dim + action_dim + 1 + 2 * time_frequencies];
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        Ok(Self {
            net: Mlp::new(&dims, Activation::SiLU, Activation::Identity, stream)?,
            state_dim,
            action_dim,
            time_frequencies,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_dim + 1 + 2 * self.time_frequencies
    }

    /// Assemble network inputs; `times[i]` is the time of row `i`.
    pub fn inputs(&self, states: &Matrix, x: &Matrix, times: &[f64]) -> Matrix {
        let n = states.rows();
        let mut data = Vec::with_capacity(n * self.input_dim());
        for i in 0..n {
            data.extend_from_slice(states.row(i));
            data.extend_from_slice(x.row(i));
            data.extend(time_embedding(times[i], self.time_frequencies));
        }
        Matrix::from_raw(n, self.input_dim(), data)
    }

    pub fn eval(&self, states: &Matrix, x: &Matrix, times: &[f64]) -> Result<Matrix> {
        self.net.predict(&self.inputs(states, x, times))
    }
}

/// Cumulative signal levels `alpha_bar[t-1]` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule with per-step betas clipped at [`MAX_BETA`].
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("diffusion needs at least one step".into()));
        }
        let f = |t: f64| {
            let v = ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * PI / 2.0).cos();
            v * v
        };
        let f0 = f(0.0);
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for t in 1..=steps {
            let target = f(t as f64) / f0;
            let beta = (1.0 - target / prev).clamp(0.0, MAX_BETA);
            prev *= 1.0 - beta;
            alpha_bar.push(prev);
        }
        Ok(Self { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    /// `alpha_bar_t` for `t` in `0..=T` (with `alpha_bar_0 = 1`).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar(t) / self.alpha_bar(t - 1)
    }

    /// Posterior variance of the reverse step from `t` to `t - 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Forward corruption `sqrt(ab) a + sqrt(1 - ab) xi`.
    pub fn corrupt(&self, t: usize, a: f64, xi: f64) -> f64 {
        let ab = self.alpha_bar(t);
        ab.sqrt() * a + (1.0 - ab).sqrt() * xi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decoder {
    Identity {
        action_dim: usize,
    },
    FlowMatching {
        velocity: VelocityNet,
        n_ode_steps: usize,
    },
    Diffusion {
        predictor: NoisePredictor,
        schedule: NoiseSchedule,
        /// Clip for the predicted clean sample, set from the training targets.
        x0_bound: Option<f64>,
    },
}

/// Architecture and sampler settings for generative decoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderArch {
    pub hidden: Vec<usize>,
    pub n_ode_steps: usize,
    pub diffusion_steps: usize,
    pub time_frequencies: usize,
}

impl Default for DecoderArch {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            n_ode_steps: 10,
            diffusion_steps: 10,
            time_frequencies: 2,
        }
    }
}

/// `atanh` of a squashed action, clipped away from ±1.
pub fn unsquash(a: f64) -> f64 {
    a.clamp(-ATANH_CLIP, ATANH_CLIP).atanh()
}

impl Decoder {
    pub fn identity(action_dim: usize) -> Self {
        Decoder::Identity { action_dim }
    }

    /// A freshly initialized decoder of `kind`.
    pub fn build(
        kind: DecoderKind,
        state_dim: usize,
        action_dim: usize,
        arch: &DecoderArch,
        stream: &mut RngStream,
    ) -> Result<Self> {
        Ok(match kind {
            DecoderKind::Identity => Decoder::Identity { action_dim },
            DecoderKind::FlowMatching => {
                if arch.n_ode_steps == 0 {
                    return Err(Error::Invalid("n_ode_steps must be >= 1".into()));
                }
                Decoder::FlowMatching {
                    velocity: ConditionalNet::new(
                        state_dim,
                        action_dim,
                        &arch.hidden,
                        arch.time_frequencies,
                        stream,
                    )?,
                    n_ode_steps: arch.n_ode_steps,
                }
            }
            DecoderKind::Diffusion => Decoder::Diffusion {
                predictor: ConditionalNet::new(
                    state_dim,
                    action_dim,
                    &arch.hidden,
                    arch.time_frequencies,
                    stream,
                )?,
                schedule: NoiseSchedule::cosine(arch.diffusion_steps)?,
                x0_bound: None,
            },
        })
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Identity { .. } => DecoderKind::Identity,
            Decoder::FlowMatching { .. } => DecoderKind::FlowMatching,
            Decoder::Diffusion { .. } => DecoderKind::Diffusion,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Decoder::Identity { action_dim } => *action_dim,
            Decoder::FlowMatching { velocity, .. } => velocity.action_dim,
            Decoder::Diffusion { predictor, .. } => predictor.action_dim,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Decoder::Identity { .. } => &[],
            Decoder::FlowMatching { velocity, .. } => velocity.net.params(),
            Decoder::Diffusion { predictor, .. } => predictor.net.params(),
        }
    }

    fn net_mut(&mut self) -> Option<&mut ConditionalNet> {
        match self {
            Decoder::Identity { .. } => None,
            Decoder::FlowMatching { velocity, .. } => Some(velocity),
            Decoder::Diffusion { predictor, .. } => Some(predictor),
        }
    }

    fn check_batch(&self, states: &Matrix, eps: &Matrix) -> Result<()> {
        if eps.cols() != self.action_dim() {
            return Err(Error::Dimension(format!(
                "latent dim {} for action dim {}",
                eps.cols(),
                self.action_dim()
            )));
        }
        if states.rows() != eps.rows() {
            return Err(Error::Dimension("state and latent batch sizes differ".into()));
        }
        Ok(())
    }

    fn noise_draws(&self) -> usize {
        match self {
            Decoder::Diffusion { schedule, .. } => (schedule.steps() - 1) * self.action_dim(),
            _ => 0,
        }
    }

    /// Pre-squash outputs; `noise` holds the reverse-step draws of each row.
    fn generate(&self, states: &Matrix, eps: &Matrix, noise: &[Vec<f64>]) -> Result<Matrix> {
        self.check_batch(states, eps)?;
        let n = eps.rows();
        let out = match self {
            Decoder::Identity { .. } => eps.clone(),
            Decoder::FlowMatching {
                velocity,
                n_ode_steps,
            } => {
                let dt = 1.0 / *n_ode_steps as f64;
                let mut x = eps.clone();
                for k in 0..*n_ode_steps {
                    let t = vec![k as f64 * dt; n];
                    let v = velocity.eval(states, &x, &t)?;
                    for (xi, vi) in x.data_mut().iter_mut().zip(v.data()) {
                        *xi += dt * vi;
                    }
                    if !x.is_finite() {
                        return Err(Error::NonFinite(format!("flow state at step {k}")));
                    }
                }
                x
            }
            Decoder::Diffusion {
                predictor,
                schedule,
                x0_bound,
            } => {
                let steps = schedule.steps();
                let d = self.action_dim();
                let bound = x0_bound.unwrap_or(f64::INFINITY);
                let mut x = eps.clone();
                for t in (1..=steps).rev() {
                    let tt = vec![t as f64 / steps as f64; n];
                    let eps_hat = predictor.eval(states, &x, &tt)?;
                    let ab = schedule.alpha_bar(t);
                    let ab_prev = schedule.alpha_bar(t - 1);
                    let beta = schedule.beta(t);
                    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
                    let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                    let sigma = schedule.posterior_variance(t).sqrt();
                    for i in 0..n {
                        let e = eps_hat.row(i).to_vec();
                        let row = x.row_mut(i);
                        for k in 0..d {
                            let x0 = ((row[k] - (1.0 - ab).sqrt() * e[k]) / ab.sqrt())
                                .clamp(-bound, bound);
                            let mean = c0 * x0 + ct * row[k];
                            row[k] = if t > 1 {
                                mean + sigma * noise[i][(steps - t) * d + k]
                            } else {
                                mean
                            };
                        }
                    }
                    if !x.is_finite() {
                        return Err(Error::NonFinite(format!("diffusion state at step {t}")));
                    }
                }
                x
            }
        };
        Ok(out)
    }

    /// Pre-squash decode with one stream per row (only diffusion draws).
    pub fn decode_pre_squash(
        &self,
        states: &Matrix,
        eps: &Matrix,
        streams: &mut [RngStream],
    ) -> Result<Matrix> {
        if streams.len() != eps.rows() {
            return Err(Error::Dimension(format!(
                "{} streams for {} latents",
                streams.len(),
                eps.rows()
            )));
        }
        let m = self.noise_draws();
        let noise: Vec<Vec<f64>> = streams
            .iter_mut()
            .map(|s| (0..m).map(|_| s.normal()).collect())
            .collect();
        self.generate(states, eps, &noise)
    }

    /// Batched decode, row `i` drawing reverse-step noise from `streams[i]`.
    pub fn decode_batch(
        &self,
        states: &Matrix,
        eps: &Matrix,
        streams: &mut [RngStream],
    ) -> Result<Matrix> {
        Ok(self.decode_pre_squash(states, eps, streams)?.map(f64::tanh))
    }

    /// Batched decode with every row drawing from one stream, in row order.
    pub fn decode_shared(
        &self,
        states: &Matrix,
        eps: &Matrix,
        stream: &mut RngStream,
    ) -> Result<Matrix> {
        let m = self.noise_draws();
        let noise: Vec<Vec<f64>> = (0..eps.rows())
            .map(|_| (0..m).map(|_| stream.normal()).collect())
            .collect();
        Ok(self.generate(states, eps, &noise)?.map(f64::tanh))
    }

    pub fn decode(&self, state: &[f64], eps: &[f64], stream: &mut RngStream) -> Result<Vec<f64>> {
        let out = self.decode_batch(
            &Matrix::row_vector(state)?,
            &Matrix::row_vector(eps)?,
            std::slice::from_mut(stream),
        )?;
        Ok(out.row(0).to_vec())
    }
}

/// Mean over rows of the squared error norm, with its gradient w.r.t. `pred`.
pub fn mse_rows(pred: &Matrix, target: &Matrix) -> (f64, Matrix) {
    let n = pred.rows().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, Matrix::from_raw(pred.rows(), pred.cols(), grad))
}

/// Interpolation inputs `(1 - tau) eps + tau a` and velocity targets `a - eps`.
pub fn fm_regression_pairs(actions: &Matrix, eps: &Matrix, taus: &[f64]) -> (Matrix, Matrix) {
    let d = actions.cols();
    let n = actions.rows();
    let mut x = Vec::with_capacity(n * d);
    let mut target = Vec::with_capacity(n * d);
    for i in 0..n {
        let tau = taus[i];
        for (&a, &e) in actions.row(i).iter().zip(eps.row(i)) {
            x.push((1.0 - tau) * e + tau * a);
            target.push(a - e);
        }
    }
    (Matrix::from_raw(n, d, x), Matrix::from_raw(n, d, target))
}

/// Loss value and parameter gradient of one regression step.
#[derive(Debug, Clone)]
pub struct RegressionStep {
    pub loss: f64,
    pub grads: Vec<f64>,
}

fn check_regression_batch(states: &Matrix, actions: &Matrix) -> Result<()> {
    if actions.rows() == 0 {
        return Err(Error::Empty("decoder regression batch".into()));
    }
    if states.rows() != actions.rows() {
        return Err(Error::Dimension("states and actions differ in length".into()));
    }
    Ok(())
}

/// Conditional flow-matching loss on pre-squash `actions` for given prior
/// draws `eps` and times `taus`.
pub fn fm_loss(
    vel: &VelocityNet,
    states: &Matrix,
    actions: &Matrix,
    eps: &Matrix,
    taus: &[f64],
) -> Result<RegressionStep> {
    check_regression_batch(states, actions)?;
    let (x, target) = fm_regression_pairs(actions, eps, taus);
    let (pred, tape) = vel.net.forward(&vel.inputs(states, &x, taus))?;
    let (loss, g) = mse_rows(&pred, &target);
    let grads = vel.net.backward(&tape, &g)?.params;
    Ok(RegressionStep { loss, grads })
}

/// Corrupted inputs `a_t` and the noise targets for steps `ts` and noise `xis`.
pub fn diffusion_regression_pairs(
    sched: &NoiseSchedule,
    actions: &Matrix,
    ts: &[usize],
    xis: &Matrix,
) -> (Matrix, Matrix) {
    let d = actions.cols();
    let n = actions.rows();
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        for (&a, &xi) in actions.row(i).iter().zip(xis.row(i)) {
            x.push(sched.corrupt(ts[i], a, xi));
        }
    }
    (Matrix::from_raw(n, d, x), xis.clone())
}

/// Noise-prediction loss with `t ~ U{1..T}` and `xi ~ N(0, I)` drawn from `stream`.
pub fn diffusion_loss(
    pred_net: &NoisePredictor,
    sched: &NoiseSchedule,
    states: &Matrix,
    actions: &Matrix,
    stream: &mut RngStream,
) -> Result<RegressionStep> {
    check_regression_batch(states, actions)?;
    let n = actions.rows();
    let steps = sched.steps();
    let ts: Vec<usize> = (0..n).map(|_| 1 + stream.index(steps)).collect();
    let xis = crate::mathcore::gaussian_draw(stream, n, actions.cols());
    let (x, target) = diffusion_regression_pairs(sched, actions, &ts, &xis);
    let times: Vec<f64> = ts.iter().map(|&t| t as f64 / steps as f64).collect();
    let (pred, tape) = pred_net.net.forward(&pred_net.inputs(states, &x, &times))?;
    let (loss, g) = mse_rows(&pred, &target);
    let grads = pred_net.net.backward(&tape, &g)?.params;
    Ok(RegressionStep { loss, grads })
}

/// `(state, pre-squash action)` pairs for decoder regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderDataset {
    pub states: Matrix,
    pub targets: Matrix,
}

impl DecoderDataset {
    /// Policy-side observations and unsquashed actions of every transition.
    pub fn from_buffer(buffer: &RolloutBuffer) -> Self {
        Self {
            states: buffer.obs.clone(),
            targets: buffer.actions.map(unsquash),
        }
    }

    /// Keep transitions whose `scores` lie in the top `keep_fraction`.
    /// Ties at the threshold are kept; original order is preserved.
    pub fn top_fraction(buffer: &RolloutBuffer, scores: &[f64], keep_fraction: f64) -> Result<Self> {
        if scores.len() != buffer.len() {
            return Err(Error::Dimension("one score per transition required".into()));
        }
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(Error::Invalid(format!("keep fraction {keep_fraction}")));
        }
        let full = Self::from_buffer(buffer);
        if keep_fraction >= 1.0 || scores.is_empty() {
            return Ok(full);
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let k = ((keep_fraction * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
        let threshold = sorted[k - 1];
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= threshold).collect();
        Ok(Self {
            states: full.states.select_rows(&idx),
            targets: full.targets.select_rows(&idx),
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr: 3e-4,
        }
    }
}

/// Fit the decoder to `data` from fresh `N(0, I)` prior draws.
///
/// Only the decoder and the dataset are read; the encoder plays no part.
/// Returns the mean minibatch loss of every epoch.
pub fn train_decoder(
    dec: &mut Decoder,
    data: &DecoderDataset,
    cfg: &DecoderTrainConfig,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    if dec.kind() == DecoderKind::Identity {
        return Err(Error::Invalid("the identity decoder is not trainable".into()));
    }
    if data.is_empty() {
        return Err(Error::Empty(
            "decoder dataset (no rollouts were collected)".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("decoder batch_size must be >= 1".into()));
    }
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let d = dec.action_dim();
    let n_params = dec.params().len();
    let mut adam = AdamState::new(n_params, AdamConfig::with_lr(cfg.lr));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        stream.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let states = data.states.select_rows(chunk);
            let targets = data.targets.select_rows(chunk);
            let step = match &*dec {
                Decoder::FlowMatching { velocity, .. } => {
                    let eps = crate::mathcore::gaussian_draw(stream, chunk.len(), d);
                    let taus: Vec<f64> = (0..chunk.len()).map(|_| stream.uniform()).collect();
                    fm_loss(velocity, &states, &targets, &eps, &taus)?
                }
                Decoder::Diffusion {
                    predictor,
                    schedule,
                    ..
                } => diffusion_loss(predictor, schedule, &states, &targets, stream)?,
                Decoder::Identity { .. } => unreachable!(),
            };
            if !step.loss.is_finite() {
                return Err(Error::NonFinite("decoder loss".into()));
            }
            let net = dec.net_mut().expect("trainable decoder");
            adam.step(net.net.params_mut(), &step.grads)?;
            total += step.loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    if let Decoder::Diffusion { x0_bound, .. } = dec {
        let max = data.targets.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        *x0_bound = Some(max);
    }
    Ok(history)
}
