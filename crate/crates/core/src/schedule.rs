//! Diffusion noise schedule tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
}

/// Schedule selection as it appears in configs and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            steps: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.kind, self.steps)
    }
}

/// Per-step quantities for one timestep `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub beta: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub alpha_bar_prev: f64,
    pub posterior_var: f64,
}

/// Precomputed `β_t`, `α_t`, `ᾱ_t` and fixed-small posterior variance for
/// `t = 1..=T`. Index 0 of each table is timestep 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

/// Cosine schedule with offset 0.008 and β clipped at 0.999.
pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::range("diffusion steps", steps, ">= 2"));
    }
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0);
    let mut betas = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut posterior_vars = Vec::with_capacity(steps);
    let mut prev_target = 1.0;
    let mut prev_bar = 1.0;
    for t in 1..=steps {
        let target = f(t) / f0;
        let beta = (1.0 - target / prev_target).min(MAX_BETA);
        let alpha = 1.0 - beta;
        // ᾱ is rebuilt as a running product so clipping stays consistent.
        let bar = prev_bar * alpha;
        let post = (1.0 - prev_bar) / (1.0 - bar) * beta;
        betas.push(beta);
        alphas.push(alpha);
        alpha_bars.push(bar);
        posterior_vars.push(post);
        prev_target = target;
        prev_bar = bar;
    }
    Ok(NoiseSchedule {
        steps,
        betas,
        alphas,
        alpha_bars,
        posterior_vars,
    })
}

impl NoiseSchedule {
    pub fn build(kind: ScheduleKind, steps: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Cosine => cosine_schedule(steps),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_vars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::range("timestep", t, format!("1..={}", self.steps)));
        }
        Ok(())
    }

    /// Coefficients at timestep `t` (1-based); `ᾱ_0 = 1`.
    pub fn lookup(&self, t: usize) -> Result<StepCoefficients> {
        self.check_step(t)?;
        let i = t - 1;
        Ok(StepCoefficients {
            beta: self.betas[i],
            alpha: self.alphas[i],
            alpha_bar: self.alpha_bars[i],
            alpha_bar_prev: if i == 0 { 1.0 } else { self.alpha_bars[i - 1] },
            posterior_var: self.posterior_vars[i],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_schedules() {
        assert!(cosine_schedule(1).is_err());
        assert!(cosine_schedule(0).is_err());
        assert!(cosine_schedule(2).is_ok());
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        for steps in [2, 10, 100, 1000] {
            let s = cosine_schedule(steps).unwrap();
            assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
            assert!(s.alpha_bars()[0] < 1.0);
        }
    }

    #[test]
    fn endpoints_at_desk_scale() {
        let s = cosine_schedule(100).unwrap();
        assert!(s.lookup(1).unwrap().alpha_bar >= 0.99);
        assert!(s.lookup(100).unwrap().alpha_bar <= 0.01);
    }

    #[test]
    fn first_posterior_variance_is_zero() {
        let s = cosine_schedule(100).unwrap();
        let c = s.lookup(1).unwrap();
        assert_eq!(c.posterior_var, 0.0);
        assert_eq!(c.alpha_bar_prev, 1.0);
    }

    #[test]
    fn lookup_bounds_and_last_entry() {
        let s = cosine_schedule(50).unwrap();
        assert!(s.lookup(0).is_err());
        assert!(s.lookup(51).is_err());
        assert_eq!(s.lookup(50).unwrap().alpha_bar, *s.alpha_bars().last().unwrap());
    }

    #[test]
    fn table_invariants() {
        for steps in [10, 100, 1000] {
            let s = cosine_schedule(steps).unwrap();
            for t in 1..=steps {
                let c = s.lookup(t).unwrap();
                assert!(c.beta > 0.0 && c.beta <= MAX_BETA);
                assert!(c.alpha_bar > 0.0 && c.alpha_bar < 1.0);
                assert!((c.alpha_bar - c.alpha_bar_prev * c.alpha).abs() < 1e-12);
                assert!(c.posterior_var <= c.beta);
                let ratio = (1.0 - c.alpha_bar_prev) / (1.0 - c.alpha_bar);
                assert!((c.posterior_var / c.beta - ratio).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clipping_hits_the_last_step() {
        let s = cosine_schedule(100).unwrap();
        assert_eq!(*s.betas().last().unwrap(), MAX_BETA);
    }
}
