use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        adam_step(params, grads, self)
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2];
        let mut st = AdamState::new(2, AdamConfig::default());
        st.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        for g in [1e-3, 0.5, -7.0, 123.0] {
            let mut p = vec![1.0];
            let cfg = AdamConfig {
                eps: 0.0,
                ..AdamConfig::with_lr(0.01)
            };
            let mut st = AdamState::new(1, cfg);
            st.step(&mut p, &[g]).unwrap();
            assert!(((1.0 - p[0]).abs() - 0.01).abs() < 1e-15, "g={g}");
        }
    }

    #[test]
    fn errors() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        assert!(matches!(st.step(&mut p, &[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(
            st.step(&mut p, &[1.0, f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn two_steps_on_quadratic_match_recursion() {
        // f(x) = 0.5 * a * x^2, grad = a x
        let a = 3.0;
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.8,
            beta2: 0.95,
            eps: 1e-6,
        };
        let mut x = vec![2.0];
        let mut st = AdamState::new(1, cfg);
        for _ in 0..2 {
            let g = a * x[0];
            st.step(&mut x, &[g]).unwrap();
        }
        // Hand-rolled recursion.
        let (mut y, mut m, mut v) = (2.0_f64, 0.0_f64, 0.0_f64);
        for t in 1..=2 {
            let g = a * y;
            m = 0.8 * m + 0.2 * g;
            v = 0.95 * v + 0.05 * g * g;
            let mh = m / (1.0 - 0.8_f64.powi(t));
            let vh = v / (1.0 - 0.95_f64.powi(t));
            y -= 0.05 * mh / (vh.sqrt() + 1e-6);
        }
        assert!((x[0] - y).abs() < 1e-12);
    }
}
