use gorl_core::decoder::{fm_loss, ConditionalNet};
use gorl_core::encoder::GaussianHead;
use gorl_core::mathcore::{gaussian_draw, Activation, Matrix, Mlp, RngStream};
use gorl_core::ppo::{ppo_surrogate, Critic, PpoConfig, PriorPenalty, SurrogateBatch};
use proptest::prelude::*;

const H: f64 = 1e-4;

/// Five-point central difference of `f` at 0 with step `H`.
fn fd5(f: impl Fn(f64) -> f64) -> f64 {
    (f(-2.0 * H) - 8.0 * f(-H) + 8.0 * f(H) - f(2.0 * H)) / (12.0 * H)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Scalar probe `sum(w * f(x))` so every output coordinate contributes.
fn probe(net: &Mlp, x: &Matrix, w: &Matrix) -> f64 {
    let y = net.predict(x).unwrap();
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn check_mlp(dims: &[usize], hidden: Activation, seed: u64) -> f64 {
    let mut s = RngStream::new(seed, 0);
    let mut net = Mlp::new(dims, hidden, Activation::Tanh, &mut s).unwrap();
    for b in 0..net.n_layers() {
        for v in net.bias_mut(b) {
            *v = 0.3 * s.normal();
        }
    }
    let rows = 3;
    let x = gaussian_draw(&mut s, rows, dims[0]);
    let w = gaussian_draw(&mut s, rows, *dims.last().unwrap());
    let (_, tape) = net.forward(&x).unwrap();
    let g = net.backward(&tape, &w).unwrap();

    let mut worst: f64 = 0.0;
    let n = net.n_params();
    let picks: Vec<usize> = if n <= 48 {
        (0..n).collect()
    } else {
        (0..48).map(|_| s.index(n)).collect()
    };
    for &k in &picks {
        let fd = fd5(|h| {
            let mut m = net.clone();
            m.params_mut()[k] += h;
            probe(&m, &x, &w)
        });
        worst = worst.max(rel_err(g.params[k], fd));
    }
    // Directional derivative touches every parameter at once.
    let dir: Vec<f64> = (0..n).map(|_| s.normal()).collect();
    let base = net.params().to_vec();
    let fd = fd5(|h| {
        let mut m = net.clone();
        for ((p, b), d) in m.params_mut().iter_mut().zip(&base).zip(&dir) {
            *p = b + h * d;
        }
        probe(&m, &x, &w)
    });
    let an: f64 = g.params.iter().zip(&dir).map(|(a, b)| a * b).sum();
    worst = worst.max(rel_err(an, fd));
    // Input gradient.
    for i in 0..rows {
        for j in 0..dims[0] {
            let fd = fd5(|h| {
                let mut xp = x.clone();
                xp.set(i, j, x.get(i, j) + h);
                probe(&net, &xp, &w)
            });
            worst = worst.max(rel_err(g.input.get(i, j), fd));
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mlp_backward_matches_finite_differences(
        widths in prop::collection::vec(1usize..=64, 2..=5),
        silu in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let act = if silu { Activation::SiLU } else { Activation::Tanh };
        let worst = check_mlp(&widths, act, seed);
        prop_assert!(worst < 1e-4, "dims {:?}: rel err {}", widths, worst);
    }
}

fn small_batch(head: &GaussianHead, s: &mut RngStream, n: usize) -> SurrogateBatch {
    let obs = gaussian_draw(s, n, head.obs_dim());
    let mut streams: Vec<RngStream> = (0..n).map(|i| s.sibling(100 + i as u64)).collect();
    let (latents, lps, _) = head.sample_batch(&obs, &mut streams).unwrap();
    SurrogateBatch {
        obs,
        latents,
        advantages: (0..n).map(|_| s.normal()).collect(),
        returns: (0..n).map(|_| s.normal()).collect(),
        // Shift old log-probs so ratios are spread around 1 but mostly unclipped.
        old_log_probs: lps.iter().map(|lp| lp + 0.05 * s.normal()).collect(),
    }
}

fn perturbed_head(s: &mut RngStream) -> GaussianHead {
    let mut head = GaussianHead::new(3, 2, &[8, 8], s).unwrap();
    for p in head.params_mut() {
        *p += 0.1 * s.normal();
    }
    head
}

#[test]
fn surrogate_gradients_match_finite_differences() {
    for penalty in [PriorPenalty::Kl, PriorPenalty::L2] {
        let mut s = RngStream::new(5, 0);
        let head = perturbed_head(&mut s);
        let critic = Critic::new(3, &[8], &mut s).unwrap();
        let batch = small_batch(&head, &mut s, 12);
        let cfg = PpoConfig {
            kl_beta: 0.3,
            entropy_coef: 0.05,
            clip: 10.0,
            prior_penalty: penalty,
            ..Default::default()
        };
        let out = ppo_surrogate(&head, &critic, &batch, &cfg).unwrap();
        for k in 0..head.params().len() {
            let fd = fd5(|h| {
                let mut m = head.clone();
                m.params_mut()[k] += h;
                ppo_surrogate(&m, &critic, &batch, &cfg).unwrap().loss
            });
            assert!(rel_err(out.head_grads[k], fd) < 1e-4, "head {k}: {} vs {fd}", out.head_grads[k]);
        }
        for k in 0..critic.net.n_params() {
            let fd = fd5(|h| {
                let mut m = critic.clone();
                m.net.params_mut()[k] += h;
                ppo_surrogate(&head, &m, &batch, &cfg).unwrap().loss
            });
            assert!(rel_err(out.critic_grads[k], fd) < 1e-4, "critic {k}");
        }
    }
}

#[test]
fn ratio_is_one_at_old_policy() {
    let mut s = RngStream::new(6, 0);
    let head = perturbed_head(&mut s);
    let critic = Critic::new(3, &[8], &mut s).unwrap();
    let mut batch = small_batch(&head, &mut s, 20);
    batch.old_log_probs = head.log_prob_batch(&batch.obs, &batch.latents).unwrap();
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        kl_beta: 0.0,
        value_coef: 0.0,
        ..Default::default()
    };
    let out = ppo_surrogate(&head, &critic, &batch, &cfg).unwrap();
    assert_eq!(out.mean_ratio, 1.0);
    assert_eq!(out.clip_frac, 0.0);
    let mean_adv = batch.advantages.iter().sum::<f64>() / 20.0;
    assert!((out.policy_loss + mean_adv).abs() < 1e-15);
}

#[test]
fn clipped_samples_have_no_policy_gradient() {
    let mut s = RngStream::new(7, 0);
    let head = perturbed_head(&mut s);
    let critic = Critic::new(3, &[8], &mut s).unwrap();
    let mut batch = small_batch(&head, &mut s, 4);
    let lps = head.log_prob_batch(&batch.obs, &batch.latents).unwrap();
    // r = e^{0.5} > 1.2 with positive advantages: every sample clipped.
    batch.old_log_probs = lps.iter().map(|lp| lp - 0.5).collect();
    batch.advantages = vec![1.0, 2.0, 0.5, 3.0];
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        kl_beta: 0.0,
        ..Default::default()
    };
    let out = ppo_surrogate(&head, &critic, &batch, &cfg).unwrap();
    assert_eq!(out.clip_frac, 1.0);
    assert!(out.head_grads.iter().all(|&g| g == 0.0));
}

#[test]
fn corrupted_old_log_prob_is_an_error() {
    let mut s = RngStream::new(8, 0);
    let head = perturbed_head(&mut s);
    let critic = Critic::new(3, &[8], &mut s).unwrap();
    let mut batch = small_batch(&head, &mut s, 3);
    batch.old_log_probs[1] = f64::NEG_INFINITY;
    let err = ppo_surrogate(&head, &critic, &batch, &PpoConfig::default()).unwrap_err();
    assert!(err.is_numeric());
}

#[test]
fn flow_matching_loss_gradient() {
    let mut s = RngStream::new(9, 0);
    let vel = ConditionalNet::new(2, 1, &[8, 8], 2, &mut s).unwrap();
    let n = 10;
    let states = gaussian_draw(&mut s, n, 2);
    let actions = gaussian_draw(&mut s, n, 1);
    let eps = gaussian_draw(&mut s, n, 1);
    let taus: Vec<f64> = (0..n).map(|_| s.uniform()).collect();
    let step = fm_loss(&vel, &states, &actions, &eps, &taus).unwrap();
    for k in 0..vel.net.n_params() {
        let fd = fd5(|h| {
            let mut m = vel.clone();
            m.net.params_mut()[k] += h;
            fm_loss(&m, &states, &actions, &eps, &taus).unwrap().loss
        });
        assert!(rel_err(step.grads[k], fd) < 1e-4);
    }
}
