//! Numeric checks of the latent policy-gradient and improvement lemmas on
//! small exactly-solvable problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{gaussian_draw, softplus, Activation, Matrix, Mlp, RngStream};
use crate::par;

/// A finite discounted MDP whose policies act through a discrete latent.
/// `decoder[s][b]` is the action produced by latent bin `b` in state `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_latent_bins: usize,
    pub decoder: Vec<Vec<usize>>,
    /// `transitions[s][a][s2]`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub gamma: f64,
    pub initial: Vec<f64>,
}

/// Latent policy table `p[s][b]`.
pub type LatentPolicy = Vec<Vec<f64>>;

fn random_simplex(n: usize, stream: &mut RngStream, temperature: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (temperature * stream.normal()).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

impl TabularMdp {
    pub fn random(
        n_states: usize,
        n_actions: usize,
        n_latent_bins: usize,
        gamma: f64,
        stream: &mut RngStream,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_latent_bins == 0 {
            return Err(Error::Invalid("empty tabular instance".into()));
        }
        let decoder = (0..n_states)
            .map(|_| (0..n_latent_bins).map(|_| stream.index(n_actions)).collect())
            .collect();
        let transitions = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| random_simplex(n_states, stream, 1.5))
                    .collect()
            })
            .collect();
        let rewards = (0..n_states)
            .map(|_| (0..n_actions).map(|_| stream.uniform_range(-1.0, 1.0)).collect())
            .collect();
        let mdp = Self {
            n_states,
            n_actions,
            n_latent_bins,
            decoder,
            transitions,
            rewards,
            gamma,
            initial: random_simplex(n_states, stream, 1.0),
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let rows_ok = self.transitions.iter().flatten().all(|row| {
            row.len() == self.n_states
                && row.iter().all(|p| *p >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() < 1e-12
        });
        if !rows_ok || self.transitions.len() != self.n_states {
            return Err(Error::Invalid("transition rows must be distributions".into()));
        }
        if self.decoder.iter().flatten().any(|&a| a >= self.n_actions) {
            return Err(Error::Invalid("decoder maps to an unknown action".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Invalid(format!("gamma {}", self.gamma)));
        }
        Ok(())
    }

    /// Random latent policy; larger `temperature` gives peakier rows.
    pub fn random_latent_policy(&self, stream: &mut RngStream, temperature: f64) -> LatentPolicy {
        (0..self.n_states)
            .map(|_| random_simplex(self.n_latent_bins, stream, temperature))
            .collect()
    }

    /// Action policy induced by decoding latent draws.
    pub fn pushforward(&self, latent: &LatentPolicy) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| pushforward_row(&latent[s], &self.decoder[s], self.n_actions))
            .collect()
    }
}

/// Push a latent distribution through a bin-to-action table.
pub fn pushforward_row(p: &[f64], decoder: &[usize], n_actions: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_actions];
    for (pb, &a) in p.iter().zip(decoder) {
        out[a] += pb;
    }
    out
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("linear system must be square".into()));
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[piv][col].abs() < 1e-14 {
            return Err(Error::Singular(format!("pivot {col}")));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Exact quantities of a latent policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `sum_s mu0(s) V(s)`.
    pub j: f64,
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub advantage: Vec<Vec<f64>>,
    /// Normalized discounted visitation `(1 - gamma) sum_t gamma^t P(s_t = s)`.
    pub visitation: Vec<f64>,
    pub action_policy: Vec<Vec<f64>>,
}

pub fn exact_eval(mdp: &TabularMdp, latent: &LatentPolicy) -> Result<Evaluation> {
    if mdp.gamma >= 1.0 {
        return Err(Error::Singular(format!(
            "discounted evaluation needs gamma < 1, got {}",
            mdp.gamma
        )));
    }
    if latent.len() != mdp.n_states
        || latent
            .iter()
            .any(|r| r.len() != mdp.n_latent_bins || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9)
    {
        return Err(Error::Invalid("latent policy rows must be distributions".into()));
    }
    let n = mdp.n_states;
    let g = mdp.gamma;
    let pi = mdp.pushforward(latent);
    let mut p_pi = vec![vec![0.0; n]; n];
    let mut r_pi = vec![0.0; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            r_pi[s] += pi[s][a] * mdp.rewards[s][a];
            for s2 in 0..n {
                p_pi[s][s2] += pi[s][a] * mdp.transitions[s][a][s2];
            }
        }
    }
    let system: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| f64::from(u8::from(i == j)) - g * p_pi[i][j])
                .collect()
        })
        .collect();
    let v = solve_linear(system.clone(), r_pi)?;
    let transposed: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| system[j][i]).collect()).collect();
    let occ = solve_linear(transposed, mdp.initial.clone())?;
    let visitation: Vec<f64> = occ.iter().map(|x| (1.0 - g) * x).collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    mdp.rewards[s][a]
                        + g * (0..n).map(|s2| mdp.transitions[s][a][s2] * v[s2]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let advantage = (0..n)
        .map(|s| q[s].iter().map(|qa| qa - v[s]).collect())
        .collect();
    let j = mdp.initial.iter().zip(&v).map(|(m, v)| m * v).sum();
    Ok(Evaluation {
        j,
        v,
        q,
        advantage,
        visitation,
        action_policy: pi,
    })
}

/// `E_{s ~ d, a ~ pi'}[A(s, a)] / (1 - gamma)` for a given visitation `d`.
pub fn surrogate(mdp: &TabularMdp, old: &Evaluation, new_pi: &[Vec<f64>], d: &[f64]) -> f64 {
    let mut total = 0.0;
    for s in 0..mdp.n_states {
        let f: f64 = (0..mdp.n_actions)
            .map(|a| new_pi[s][a] * old.advantage[s][a])
            .sum();
        total += d[s] * f;
    }
    total / (1.0 - mdp.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `J(theta') - J(theta)`.
    pub lhs: f64,
    pub surrogate: f64,
    pub delta: f64,
    pub c: f64,
    pub a_max: f64,
    pub slack: f64,
    /// `||d' - d||_1`.
    pub visitation_shift: f64,
    /// `2 gamma / (1 - gamma) * E_d[TV(pi', pi)]` over actions.
    pub visitation_bound: f64,
    /// `J' - J - E_{d'}[A] / (1 - gamma)`; zero by the performance difference identity.
    pub identity_residual: f64,
}

pub fn improvement_constant(gamma: f64) -> f64 {
    2.0 * gamma / (1.0 - gamma).powi(2)
}

pub fn check_performance_bound(
    mdp: &TabularMdp,
    theta: &LatentPolicy,
    theta_new: &LatentPolicy,
) -> Result<BoundReport> {
    let old = exact_eval(mdp, theta)?;
    let new = exact_eval(mdp, theta_new)?;
    let n = mdp.n_states;
    let delta: f64 = (0..n)
        .map(|s| old.visitation[s] * total_variation(&theta_new[s], &theta[s]))
        .sum();
    let action_tv: f64 = (0..n)
        .map(|s| old.visitation[s] * total_variation(&new.action_policy[s], &old.action_policy[s]))
        .sum();
    let mut a_max: f64 = 0.0;
    for s in 0..n {
        for &a in &mdp.decoder[s] {
            a_max = a_max.max(old.advantage[s][a].abs());
        }
    }
    let c = improvement_constant(mdp.gamma);
    let lhs = new.j - old.j;
    let sur = surrogate(mdp, &old, &new.action_policy, &old.visitation);
    let exact = surrogate(mdp, &old, &new.action_policy, &new.visitation);
    let shift: f64 = new
        .visitation
        .iter()
        .zip(&old.visitation)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(BoundReport {
        lhs,
        surrogate: sur,
        delta,
        c,
        a_max,
        slack: lhs - (sur - c * a_max * delta),
        visitation_shift: shift,
        visitation_bound: 2.0 * mdp.gamma / (1.0 - mdp.gamma) * action_tv,
        identity_residual: lhs - exact,
    })
}

/// `(TV(p, q), TV(g#p, g#q))` for a bin-to-action table `g`.
pub fn check_tv_data_processing(
    p: &[f64],
    q: &[f64],
    decoder: &[usize],
    n_actions: usize,
) -> Result<(f64, f64)> {
    if p.len() != q.len() || p.len() != decoder.len() {
        return Err(Error::Dimension("latent distributions and table differ in size".into()));
    }
    if decoder.iter().any(|&a| a >= n_actions) {
        return Err(Error::Invalid("decoder maps to an unknown action".into()));
    }
    let tv_latent = total_variation(p, q);
    let tv_action = total_variation(
        &pushforward_row(p, decoder, n_actions),
        &pushforward_row(q, decoder, n_actions),
    );
    Ok((tv_latent, tv_action))
}

/// A one-step problem `a = g(eps)`, reward `r(a)`, with a scalar Gaussian
/// head `eps ~ N(mu, softplus(rho)^2)`.
pub struct GaussianBandit<'a> {
    pub decoder: &'a (dyn Fn(f64) -> f64 + Sync),
    pub reward: &'a (dyn Fn(f64) -> f64 + Sync),
}

/// `d log N(eps; mu, sigma) / d(mu, rho)` with `sigma = softplus(rho)`.
pub fn head_score(eps: f64, mu: f64, rho: f64) -> [f64; 2] {
    let sigma = softplus(rho);
    let z = (eps - mu) / sigma;
    let dsigma = crate::mathcore::sigmoid(rho);
    [z / sigma, (z * z - 1.0) / sigma * dsigma]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub score_function: [f64; 2],
    pub score_se: [f64; 2],
    pub finite_difference: [f64; 2],
    pub fd_se: [f64; 2],
    pub z: [f64; 2],
    pub baseline: f64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Per-sample score-function terms `grad log pi(eps) * adv(eps)`.
pub fn score_terms(
    params: [f64; 2],
    draws: &[f64],
    advantage: &(dyn Fn(f64) -> f64 + Sync),
) -> Vec<[f64; 2]> {
    let (mu, rho) = (params[0], params[1]);
    let sigma = softplus(rho);
    draws
        .iter()
        .map(|&z| {
            let eps = mu + sigma * z;
            let s = head_score(eps, mu, rho);
            let a = advantage(eps);
            [s[0] * a, s[1] * a]
        })
        .collect()
}

/// Compare the latent score-function gradient of `J = E[r(g(eps))]` with
/// central finite differences of Monte Carlo estimates of `J`.
pub fn check_unbiased_gradient(
    bandit: &GaussianBandit<'_>,
    params: [f64; 2],
    n_samples: usize,
    seed: u64,
) -> Result<GradientReport> {
    if n_samples < 2 {
        return Err(Error::Invalid("need at least two samples".into()));
    }
    let (mu, rho) = (params[0], params[1]);
    let sigma = softplus(rho);
    let ret = |eps: f64| (bandit.reward)((bandit.decoder)(eps));
    let draw = |stream_id: u64| {
        let mut s = RngStream::new(seed, stream_id);
        let mut z = vec![0.0; n_samples];
        s.fill_normal(&mut z);
        z
    };
    let baseline_draws = draw(1);
    let baseline = baseline_draws.iter().map(|z| ret(mu + sigma * z)).sum::<f64>() / n_samples as f64;
    let sf_draws = draw(2);
    let adv = |eps: f64| ret(eps) - baseline;
    let terms = score_terms(params, &sf_draws, &adv);
    let fd_draws = draw(3);
    let h = 1e-3;
    let mut report = GradientReport {
        score_function: [0.0; 2],
        score_se: [0.0; 2],
        finite_difference: [0.0; 2],
        fd_se: [0.0; 2],
        z: [0.0; 2],
        baseline,
    };
    for k in 0..2 {
        let col: Vec<f64> = terms.iter().map(|t| t[k]).collect();
        let (m, se) = mean_and_se(&col);
        let mut up = params;
        up[k] += h;
        let mut down = params;
        down[k] -= h;
        let (su, sd) = (softplus(up[1]), softplus(down[1]));
        let diffs: Vec<f64> = par::map_chunks(n_samples, 4096, |r| {
            r.map(|i| {
                let z = fd_draws[i];
                (ret(up[0] + su * z) - ret(down[0] + sd * z)) / (2.0 * h)
            })
            .collect::<Vec<f64>>()
        })
        .concat();
        let (fd, fd_se) = mean_and_se(&diffs);
        let denom = (se * se + fd_se * fd_se).sqrt();
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::Degenerate(format!("zero variance for parameter {k}")));
        }
        report.score_function[k] = m;
        report.score_se[k] = se;
        report.finite_difference[k] = fd;
        report.fd_se[k] = fd_se;
        report.z[k] = (m - fd) / denom;
    }
    Ok(report)
}

/// Monte Carlo estimate of `J` and its standard error from `total_steps`
/// simulated steps; episodes are truncated once `gamma^t < 1e-12`.
pub fn monte_carlo_return(
    mdp: &TabularMdp,
    latent: &LatentPolicy,
    total_steps: usize,
    stream: &mut RngStream,
) -> Result<(f64, f64)> {
    let pi = mdp.pushforward(latent);
    let horizon = ((1e-12f64).ln() / mdp.gamma.ln()).ceil().max(1.0) as usize;
    let sample = |p: &[f64], stream: &mut RngStream| {
        let u = stream.uniform();
        let mut acc = 0.0;
        for (i, &w) in p.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let mut returns = Vec::new();
    let mut used = 0;
    while used + horizon <= total_steps {
        let mut s = sample(&mdp.initial, stream);
        let mut g = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = sample(&pi[s], stream);
            g += disc * mdp.rewards[s][a];
            disc *= mdp.gamma;
            s = sample(&mdp.transitions[s][a], stream);
        }
        used += horizon;
        returns.push(g);
    }
    if returns.len() < 2 {
        return Err(Error::Invalid("too few steps for an estimate".into()));
    }
    Ok(mean_and_se(&returns))
}

/// One named entry of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub values: Vec<(String, f64)>,
}

impl CheckResult {
    fn new(name: &str, passed: bool, values: Vec<(&str, f64)>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            values: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// Random instance `i` of the improvement-bound family: up to 5 states,
/// gamma up to 0.95, and a perturbed latent policy pair.
pub fn bound_instance(seed: u64, i: u64) -> Result<(TabularMdp, LatentPolicy, LatentPolicy)> {
    let mut s = RngStream::new(seed, i);
    let n_states = 1 + s.index(5);
    let n_actions = 2 + s.index(3);
    let n_bins = 2 + s.index(7);
    let gamma = s.uniform_range(0.5, 0.95);
    let mdp = TabularMdp::random(n_states, n_actions, n_bins, gamma, &mut s)?;
    let theta = mdp.random_latent_policy(&mut s, 1.0);
    let scale = [0.01, 0.1, 0.5, 2.0][s.index(4)];
    let theta_new = theta
        .iter()
        .map(|row| {
            let w: Vec<f64> = row.iter().map(|p| p * (scale * s.normal()).exp()).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|v| v / z).collect()
        })
        .collect();
    Ok((mdp, theta, theta_new))
}

/// Worst-case values over `count` random improvement-bound instances:
/// `(min slack, max visitation excess, max |identity residual|)`.
pub fn bound_sweep(seed: u64, count: usize) -> Result<(f64, f64, f64)> {
    let reports = par::map_indices(count, |i| {
        let (mdp, a, b) = bound_instance(seed, i as u64)?;
        check_performance_bound(&mdp, &a, &b)
    });
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for r in reports {
        let r = r?;
        worst.0 = worst.0.min(r.slack);
        worst.1 = worst.1.max(r.visitation_shift - r.visitation_bound);
        worst.2 = worst.2.max(r.identity_residual.abs());
    }
    Ok(worst)
}

/// Largest `TV(action) - TV(latent)` over `count` random triples on 8 bins.
pub fn data_processing_sweep(seed: u64, count: usize) -> Result<f64> {
    let gaps = par::map_indices(count, |i| {
        let mut s = RngStream::new(seed, i as u64);
        let n_actions = 1 + s.index(8);
        let p = random_simplex(8, &mut s, 1.0);
        let q = random_simplex(8, &mut s, 1.0);
        let g: Vec<usize> = (0..8).map(|_| s.index(n_actions)).collect();
        check_tv_data_processing(&p, &q, &g, n_actions).map(|(l, a)| a - l)
    });
    let mut worst = f64::NEG_INFINITY;
    for g in gaps {
        worst = worst.max(g?);
    }
    Ok(worst)
}

/// Cubic decoder `g(eps) = eps^3` with reward `-a^2`.
pub fn cubic_bandit_check(n_samples: usize, seed: u64) -> Result<GradientReport> {
    let dec = |e: f64| e * e * e;
    let rew = |a: f64| -a * a;
    check_unbiased_gradient(
        &GaussianBandit {
            decoder: &dec,
            reward: &rew,
        },
        [0.3, crate::encoder::prior_pre_scale() - 0.5],
        n_samples,
        seed,
    )
}

/// Worst relative error between `Mlp::backward` and five-point central
/// differences on a random net: 48 sampled parameters, one random
/// direction through all parameters, and every input coordinate.
pub fn mlp_gradient_error(dims: &[usize], hidden: Activation, seed: u64) -> Result<f64> {
    const H: f64 = 1e-4;
    let fd5 = |f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        Ok((f(-2.0 * H)? - 8.0 * f(-H)? + 8.0 * f(H)? - f(2.0 * H)?) / (12.0 * H))
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut s = RngStream::new(seed, 0);
    let mut net = Mlp::new(dims, hidden, Activation::Tanh, &mut s)?;
    for b in 0..net.n_layers() {
        for v in net.bias_mut(b) {
            *v = 0.3 * s.normal();
        }
    }
    let rows = 3;
    let x = gaussian_draw(&mut s, rows, dims[0]);
    let w = gaussian_draw(&mut s, rows, net.output_dim());
    let probe = |m: &Mlp, x: &Matrix| -> Result<f64> {
        Ok(m.predict(x)?.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    };
    let (_, tape) = net.forward(&x)?;
    let g = net.backward(&tape, &w)?;
    let n = net.n_params();
    let picks: Vec<usize> = if n <= 48 { (0..n).collect() } else { (0..48).map(|_| s.index(n)).collect() };
    let mut worst: f64 = 0.0;
    for &k in &picks {
        let fd = fd5(&|h| {
            let mut m = net.clone();
            m.params_mut()[k] += h;
            probe(&m, &x)
        })?;
        worst = worst.max(rel(g.params[k], fd));
    }
    let dir: Vec<f64> = (0..n).map(|_| s.normal()).collect();
    let fd = fd5(&|h| {
        let mut m = net.clone();
        for (p, d) in m.params_mut().iter_mut().zip(&dir) {
            *p += h * d;
        }
        probe(&m, &x)
    })?;
    let an: f64 = g.params.iter().zip(&dir).map(|(a, b)| a * b).sum();
    worst = worst.max(rel(an, fd));
    for i in 0..rows {
        for j in 0..dims[0] {
            let fd = fd5(&|h| {
                let mut xp = x.clone();
                xp.set(i, j, x.get(i, j) + h);
                probe(&net, &xp)
            })?;
            worst = worst.max(rel(g.input.get(i, j), fd));
        }
    }
    Ok(worst)
}

/// Random nets with 1 to 4 layers, widths 1 to 64, tanh or SiLU hidden units.
/// Returns the worst relative error.
pub fn gradient_sweep(seed: u64, count: usize) -> Result<f64> {
    let errs = par::map_indices(count, |i| {
        let mut s = RngStream::new(seed, 1000 + i as u64);
        let depth = 2 + s.index(4);
        let dims: Vec<usize> = (0..depth).map(|_| 1 + s.index(64)).collect();
        let act = if s.index(2) == 0 { Activation::Tanh } else { Activation::SiLU };
        mlp_gradient_error(&dims, act, seed.wrapping_add(i as u64))
    });
    let mut worst: f64 = 0.0;
    for e in errs {
        worst = worst.max(e?);
    }
    Ok(worst)
}

/// The full suite, one entry per named check.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    let single = TabularMdp {
        n_states: 1,
        n_actions: 1,
        n_latent_bins: 1,
        decoder: vec![vec![0]],
        transitions: vec![vec![vec![1.0]]],
        rewards: vec![vec![1.0]],
        gamma: 0.9,
        initial: vec![1.0],
    };
    let j = exact_eval(&single, &vec![vec![1.0]])?.j;
    out.push(CheckResult::new(
        "exact_eval_geometric_series",
        (j - 10.0).abs() < 1e-12,
        vec![("j", j), ("expected", 10.0)],
    ));

    let mut s = RngStream::new(seed, 100);
    let mdp = TabularMdp::random(4, 3, 4, 0.9, &mut s)?;
    let pol = mdp.random_latent_policy(&mut s, 1.0);
    let exact = exact_eval(&mdp, &pol)?.j;
    let (mc, se) = monte_carlo_return(&mdp, &pol, 1_000_000, &mut s)?;
    out.push(CheckResult::new(
        "exact_eval_matches_monte_carlo",
        ((mc - exact) / se).abs() < 3.0,
        vec![("exact", exact), ("monte_carlo", mc), ("standard_error", se)],
    ));

    let g = cubic_bandit_check(1_000_000, seed)?;
    out.push(CheckResult::new(
        "unbiased_latent_gradient",
        g.z.iter().all(|z| z.abs() < 3.0),
        vec![
            ("score_mu", g.score_function[0]),
            ("fd_mu", g.finite_difference[0]),
            ("z_mu", g.z[0]),
            ("score_rho", g.score_function[1]),
            ("fd_rho", g.finite_difference[1]),
            ("z_rho", g.z[1]),
        ],
    ));

    let (slack, excess, residual) = bound_sweep(seed, 200)?;
    out.push(CheckResult::new(
        "improvement_bound",
        slack >= -1e-9,
        vec![("min_slack", slack), ("instances", 200.0)],
    ));
    out.push(CheckResult::new(
        "visitation_shift_bound",
        excess <= 1e-10,
        vec![("max_excess", excess), ("instances", 200.0)],
    ));
    out.push(CheckResult::new(
        "performance_difference_identity",
        residual <= 1e-10,
        vec![("max_abs_residual", residual), ("instances", 200.0)],
    ));

    let grad = gradient_sweep(seed, 20)?;
    out.push(CheckResult::new(
        "mlp_backward_matches_finite_differences",
        grad < 1e-4,
        vec![("max_rel_error", grad), ("nets", 20.0)],
    ));

    let gap = data_processing_sweep(seed, 500)?;
    out.push(CheckResult::new(
        "data_processing_inequality",
        gap <= 1e-12,
        vec![("max_tv_gap", gap), ("triples", 500.0)],
    ));
    Ok(out)
}
