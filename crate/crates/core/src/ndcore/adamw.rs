use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
}

impl AdamWState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One decoupled-weight-decay Adam update, in place.
///
/// Non-finite gradients reject the step and leave both `params` and `state`
/// untouched.
pub fn adamw_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        p.ensure_same_shape(g, "adamw grad")?;
        p.ensure_same_shape(&state.first_moment[i], "adamw moment")?;
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {i}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let p = p.as_mut_slice();
        let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
        for (k, &gk) in g.as_slice().iter().enumerate() {
            p[k] -= cfg.lr * cfg.weight_decay * p[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn first_step_is_signed_step() {
        let mut p = vec![Matrix::scalar(1.0)];
        let mut s = AdamWState::new(&p);
        adamw_step(&mut p, &[Matrix::scalar(0.5)], &mut s, &cfg(0.1, 0.0)).unwrap();
        assert!((p[0].as_slice()[0] - 0.9).abs() < 1e-7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![Matrix::from_fn(2, 3, |r, c| r as f64 - c as f64)];
        let before = p.clone();
        let mut s = AdamWState::new(&p);
        for _ in 0..5 {
            adamw_step(&mut p, &[Matrix::zeros(2, 3)], &mut s, &cfg(0.1, 0.0)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn nan_gradient_rejected_without_side_effects() {
        let mut p = vec![Matrix::scalar(1.0)];
        let mut s = AdamWState::new(&p);
        adamw_step(&mut p, &[Matrix::scalar(0.3)], &mut s, &cfg(0.1, 0.0)).unwrap();
        let (p_before, s_before) = (p.clone(), s.clone());
        let bad = Matrix::from_vec_unchecked(1, 1, vec![f64::NAN]);
        assert!(adamw_step(&mut p, &[bad], &mut s, &cfg(0.1, 0.0)).is_err());
        assert_eq!(p, p_before);
        assert_eq!(s, s_before);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = vec![Matrix::scalar(1.0)];
        let mut s = AdamWState::new(&p);
        for _ in 0..500 {
            let g = Matrix::scalar(2.0 * p[0].as_slice()[0]);
            adamw_step(&mut p, &[g], &mut s, &cfg(0.05, 0.0)).unwrap();
        }
        assert!(p[0].as_slice()[0].abs() < 1e-2, "theta {}", p[0].as_slice()[0]);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = vec![Matrix::scalar(2.0)];
        let mut s = AdamWState::new(&p);
        adamw_step(&mut p, &[Matrix::scalar(0.0)], &mut s, &cfg(0.1, 0.5)).unwrap();
        assert!((p[0].as_slice()[0] - 1.9).abs() < 1e-12);
    }
}
