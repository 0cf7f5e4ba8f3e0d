//! The tractable latent policy: a diagonal Gaussian over latents whose mean
//! and pre-scale come from an MLP of the (normalized) state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{sigmoid, softplus, Activation, Matrix, Mlp, MlpGrads, RngStream, Tape};

pub const SCALE_MIN: f64 = 1e-3;
pub const SCALE_MAX: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Pre-scale bias for which the clipped softplus scale is exactly 1.
pub fn prior_pre_scale() -> f64 {
    let mut b = 1f64.exp_m1().ln();
    for _ in 0..64 {
        let s = softplus(b);
        if s == 1.0 {
            break;
        }
        b = if s > 1.0 { b.next_down() } else { b.next_up() };
    }
    b
}

/// Clipped softplus scale and its derivative with respect to the pre-scale.
#[inline]
pub fn scale_from_pre(pre: f64) -> (f64, f64) {
    let s = softplus(pre);
    if s < SCALE_MIN {
        (SCALE_MIN, 0.0)
    } else if s > SCALE_MAX {
        (SCALE_MAX, 0.0)
    } else {
        (s, sigmoid(pre))
    }
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(eps: &[f64], mean: &[f64], scale: &[f64]) -> Result<f64> {
    if eps.len() != mean.len() || eps.len() != scale.len() {
        return Err(Error::Dimension(format!(
            "latent {} vs mean {} vs scale {}",
            eps.len(),
            mean.len(),
            scale.len()
        )));
    }
    if let Some(s) = scale.iter().find(|s| !(SCALE_MIN..=SCALE_MAX).contains(*s)) {
        return Err(Error::Invalid(format!("scale {s} outside the clip range")));
    }
    Ok(log_prob_unchecked(eps, mean, scale))
}

#[inline]
pub(crate) fn log_prob_unchecked(eps: &[f64], mean: &[f64], scale: &[f64]) -> f64 {
    let mut lp = 0.0;
    for ((&e, &m), &s) in eps.iter().zip(mean).zip(scale) {
        let z = (e - m) / s;
        lp += -0.5 * z * z - s.ln() - 0.5 * LN_2PI;
    }
    lp
}

pub fn gaussian_entropy(scale: &[f64]) -> f64 {
    scale
        .iter()
        .map(|&s| 0.5 * (2.0 * PI * std::f64::consts::E * s * s).ln())
        .sum()
}

/// `KL(N(mean, diag(scale^2)) || N(0, I))`.
pub fn kl_std_normal(mean: &[f64], scale: &[f64]) -> f64 {
    mean.iter()
        .zip(scale)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}

/// Quadratic surrogate of the prior KL on mean and log-scale:
/// `sum(0.5 * mean^2 + ln(scale)^2)`, which agrees with the KL to second order.
pub fn l2_prior_penalty(mean: &[f64], scale: &[f64]) -> f64 {
    mean.iter()
        .zip(scale)
        .map(|(&m, &s)| 0.5 * m * m + s.ln().powi(2))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub epsilon: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Per-row distribution parameters for a batch of states.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub mean: Matrix,
    pub scale: Matrix,
    /// d scale / d pre-scale; zero where the clip is active.
    pub dscale: Matrix,
}

/// `pi(eps | s)`: an MLP whose final linear layer emits `[mean | pre_scale]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    net: Mlp,
    latent_dim: usize,
}

impl GaussianHead {
    /// Trunk of SiLU layers with the given hidden widths, initialized at the prior.
    pub fn new(
        obs_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        stream: &mut RngStream,
    ) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * latent_dim);
        let net = Mlp::new(&dims, Activation::SiLU, Activation::Identity, stream)?;
        let mut head = Self { net, latent_dim };
        head.zero_output_layer();
        Ok(head)
    }

    pub fn from_net(net: Mlp, latent_dim: usize) -> Result<Self> {
        if net.output_dim() != 2 * latent_dim {
            return Err(Error::Dimension(format!(
                "head outputs {} values for latent dim {}",
                net.output_dim(),
                latent_dim
            )));
        }
        Ok(Self { net, latent_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn zero_output_layer(&mut self) {
        let last = self.net.n_layers() - 1;
        self.net.weight_mut(last).fill(0.0);
        let d = self.latent_dim;
        let b = prior_pre_scale();
        let bias = self.net.bias_mut(last);
        bias[..d].fill(0.0);
        bias[d..].fill(b);
    }

    /// Reset to `N(0, I)` at every state. The output layer is zeroed with the
    /// prior bias; the trunk is redrawn when `reinit_trunk` is set.
    pub fn reinit_to_prior(&mut self, stream: &mut RngStream, reinit_trunk: bool) {
        if reinit_trunk {
            self.net.reinitialize(stream);
        }
        self.zero_output_layer();
    }

    fn split(&self, raw: &Matrix) -> HeadOutput {
        let d = self.latent_dim;
        let n = raw.rows();
        let mut mean = Vec::with_capacity(n * d);
        let mut scale = Vec::with_capacity(n * d);
        let mut dscale = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = raw.row(i);
            mean.extend_from_slice(&row[..d]);
            for &p in &row[d..] {
                let (s, ds) = scale_from_pre(p);
                scale.push(s);
                dscale.push(ds);
            }
        }
        HeadOutput {
            mean: Matrix::from_raw(n, d, mean),
            scale: Matrix::from_raw(n, d, scale),
            dscale: Matrix::from_raw(n, d, dscale),
        }
    }

    pub fn distribution(&self, obs: &Matrix) -> Result<HeadOutput> {
        let raw = self.net.predict(obs)?;
        if !raw.is_finite() {
            return Err(Error::NonFinite("encoder head output".into()));
        }
        Ok(self.split(&raw))
    }

    /// Distribution parameters plus the tape needed by [`GaussianHead::backward`].
    pub fn forward(&self, obs: &Matrix) -> Result<(HeadOutput, Tape)> {
        let (raw, tape) = self.net.forward(obs)?;
        if !raw.is_finite() {
            return Err(Error::NonFinite("encoder head output".into()));
        }
        Ok((self.split(&raw), tape))
    }

    /// Parameter gradients from dL/dmean and dL/dscale.
    pub fn backward(
        &self,
        out: &HeadOutput,
        tape: &Tape,
        dmean: &Matrix,
        dscale: &Matrix,
    ) -> Result<MlpGrads> {
        let d = self.latent_dim;
        let n = out.mean.rows();
        let mut g = Vec::with_capacity(n * 2 * d);
        for i in 0..n {
            g.extend_from_slice(dmean.row(i));
            for (gs, ds) in dscale.row(i).iter().zip(out.dscale.row(i)) {
                g.push(gs * ds);
            }
        }
        self.net.backward(tape, &Matrix::from_raw(n, 2 * d, g))
    }

    /// Draw one latent per row, row `i` using `streams[i]`.
    pub fn sample_batch(
        &self,
        obs: &Matrix,
        streams: &mut [RngStream],
    ) -> Result<(Matrix, Vec<f64>, HeadOutput)> {
        if streams.len() != obs.rows() {
            return Err(Error::Dimension(format!(
                "{} streams for {} states",
                streams.len(),
                obs.rows()
            )));
        }
        let dist = self.distribution(obs)?;
        let d = self.latent_dim;
        let mut eps = Vec::with_capacity(obs.rows() * d);
        let mut lps = Vec::with_capacity(obs.rows());
        for (i, stream) in streams.iter_mut().enumerate() {
            let (m, s) = (dist.mean.row(i), dist.scale.row(i));
            let start = eps.len();
            for k in 0..d {
                eps.push(m[k] + s[k] * stream.normal());
            }
            lps.push(log_prob_unchecked(&eps[start..], m, s));
        }
        Ok((Matrix::from_raw(obs.rows(), d, eps), lps, dist))
    }

    pub fn sample_latent(&self, state: &[f64], stream: &mut RngStream) -> Result<LatentSample> {
        let obs = Matrix::row_vector(state)?;
        let (eps, lps, dist) = self.sample_batch(&obs, std::slice::from_mut(stream))?;
        Ok(LatentSample {
            epsilon: eps.row(0).to_vec(),
            log_prob: lps[0],
            mean: dist.mean.row(0).to_vec(),
            scale: dist.scale.row(0).to_vec(),
        })
    }

    pub fn log_prob(&self, state: &[f64], epsilon: &[f64]) -> Result<f64> {
        let dist = self.distribution(&Matrix::row_vector(state)?)?;
        gaussian_log_prob(epsilon, dist.mean.row(0), dist.scale.row(0))
    }

    pub fn log_prob_batch(&self, obs: &Matrix, latents: &Matrix) -> Result<Vec<f64>> {
        if latents.rows() != obs.rows() || latents.cols() != self.latent_dim {
            return Err(Error::Dimension("latent batch shape".into()));
        }
        let dist = self.distribution(obs)?;
        Ok((0..obs.rows())
            .map(|i| log_prob_unchecked(latents.row(i), dist.mean.row(i), dist.scale.row(i)))
            .collect())
    }

    pub fn entropy(&self, state: &[f64]) -> Result<f64> {
        let dist = self.distribution(&Matrix::row_vector(state)?)?;
        Ok(gaussian_entropy(dist.scale.row(0)))
    }

    pub fn kl_to_standard_normal(&self, state: &[f64]) -> Result<f64> {
        let dist = self.distribution(&Matrix::row_vector(state)?)?;
        Ok(kl_std_normal(dist.mean.row(0), dist.scale.row(0)))
    }

    /// Mean prior KL over a batch of states.
    pub fn mean_kl(&self, obs: &Matrix) -> Result<f64> {
        if obs.rows() == 0 {
            return Ok(0.0);
        }
        let dist = self.distribution(obs)?;
        let total: f64 = (0..obs.rows())
            .map(|i| kl_std_normal(dist.mean.row(i), dist.scale.row(i)))
            .sum();
        Ok(total / obs.rows() as f64)
    }
}
