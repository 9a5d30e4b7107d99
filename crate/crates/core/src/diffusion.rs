//! Denoiser-agnostic diffusion primitives: forward noising, clean-sample and
//! noise conversions, posterior mean, the ancestral reverse step and
//! classifier-free guidance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Matrix, SeedStream};
use crate::schedule::NoiseSchedule;

/// `L × d` block of frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct Sequence(Matrix);

impl TryFrom<Matrix> for Sequence {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        Sequence::new(m)
    }
}

impl From<Sequence> for Matrix {
    fn from(s: Sequence) -> Matrix {
        s.0
    }
}

impl Sequence {
    pub fn new(frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::Invalid("a sequence needs at least one frame".into()));
        }
        if !frames.is_finite() {
            return Err(Error::Numeric("sequence contains non-finite values".into()));
        }
        Ok(Self(frames))
    }

    pub fn frames(&self) -> &Matrix {
        &self.0
    }

    pub fn into_frames(self) -> Matrix {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn first_frame(&self) -> &[f64] {
        self.0.row(0)
    }

    pub fn last_frame(&self) -> &[f64] {
        self.0.row(self.0.rows() - 1)
    }

    /// The last `h` frames (all of them if `h` exceeds the length).
    pub fn tail(&self, h: usize) -> Matrix {
        let h = h.min(self.len());
        self.0.slice_rows(self.len() - h, h)
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Sequence> {
        Sequence::new(self.0.slice_rows(start, len))
    }

    pub fn concat(parts: &[Sequence]) -> Result<Sequence> {
        let mats: Vec<&Matrix> = parts.iter().map(|s| &s.0).collect();
        Sequence::new(Matrix::vstack(&mats)?)
    }
}

/// Classifier-free guidance scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
}

impl GuidanceConfig {
    pub fn new(scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::range("guidance scale", scale, "finite and >= 0"));
        }
        Ok(Self { scale })
    }

    /// Scale 1: conditional prediction only.
    pub fn conditional_only() -> Self {
        Self { scale: 1.0 }
    }

    /// Whether the unconditional branch contributes at all.
    pub fn needs_unconditional(&self) -> bool {
        self.scale != 1.0
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale: 2.0 }
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`
pub fn q_sample(x0: &Matrix, t: usize, eps: &Matrix, schedule: &NoiseSchedule) -> Result<Matrix> {
    x0.ensure_same_shape(eps, "q_sample")?;
    let c = schedule.lookup(t)?;
    let (a, b) = (c.alpha_bar.sqrt(), (1.0 - c.alpha_bar).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

/// Clean estimate implied by a noise estimate.
pub fn x0_from_eps(x_t: &Matrix, eps: &Matrix, t: usize, schedule: &NoiseSchedule) -> Result<Matrix> {
    x_t.ensure_same_shape(eps, "x0_from_eps")?;
    let c = schedule.lookup(t)?;
    let (a, b) = (c.alpha_bar.sqrt(), (1.0 - c.alpha_bar).sqrt());
    Ok(x_t.zip_map(eps, |x, e| (x - b * e) / a))
}

/// Noise implied by a clean estimate.
pub fn eps_from_x0(x_t: &Matrix, x0: &Matrix, t: usize, schedule: &NoiseSchedule) -> Result<Matrix> {
    x_t.ensure_same_shape(x0, "eps_from_x0")?;
    let c = schedule.lookup(t)?;
    let (a, b) = (c.alpha_bar.sqrt(), (1.0 - c.alpha_bar).sqrt());
    Ok(x_t.zip_map(x0, |x, z| (x - a * z) / b))
}

/// Mean of `q(x_{t-1} | x_t, x̂0)`. At `t = 1` this is `x̂0` exactly.
pub fn posterior_mean(x_t: &Matrix, x0_hat: &Matrix, t: usize, schedule: &NoiseSchedule) -> Result<Matrix> {
    x_t.ensure_same_shape(x0_hat, "posterior_mean")?;
    let c = schedule.lookup(t)?;
    if t == 1 {
        return Ok(x0_hat.clone());
    }
    let denom = 1.0 - c.alpha_bar;
    let coef_x0 = c.alpha_bar_prev.sqrt() * c.beta / denom;
    let coef_xt = c.alpha.sqrt() * (1.0 - c.alpha_bar_prev) / denom;
    Ok(x0_hat.zip_map(x_t, |z, x| coef_x0 * z + coef_xt * x))
}

/// The same mean written in terms of a noise estimate:
/// `(x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t`.
pub fn posterior_mean_from_eps(x_t: &Matrix, eps_hat: &Matrix, t: usize, schedule: &NoiseSchedule) -> Result<Matrix> {
    x_t.ensure_same_shape(eps_hat, "posterior_mean_from_eps")?;
    let c = schedule.lookup(t)?;
    let k = c.beta / (1.0 - c.alpha_bar).sqrt();
    let inv = 1.0 / c.alpha.sqrt();
    Ok(x_t.zip_map(eps_hat, |x, e| inv * (x - k * e)))
}

/// Adds fixed-small posterior noise to a mean. No noise is drawn at `t = 1`.
pub fn add_posterior_noise(mean: &mut Matrix, t: usize, schedule: &NoiseSchedule, rng: &mut SeedStream) -> Result<()> {
    let c = schedule.lookup(t)?;
    if t == 1 {
        return Ok(());
    }
    let sd = c.posterior_var.sqrt();
    for v in mean.as_mut_slice() {
        *v += sd * rng.normal();
    }
    Ok(())
}

/// One reverse step `x_t → x_{t−1}` with variance `β̃_t`.
pub fn ancestral_step(
    x_t: &Matrix,
    x0_hat: &Matrix,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut SeedStream,
) -> Result<Matrix> {
    let mut mean = posterior_mean(x_t, x0_hat, t, schedule)?;
    add_posterior_noise(&mut mean, t, schedule, rng)?;
    Ok(mean)
}

/// `s·cond − (s − 1)·uncond`
pub fn cfg_combine(cond: &Matrix, uncond: &Matrix, g: GuidanceConfig) -> Result<Matrix> {
    cond.ensure_same_shape(uncond, "cfg_combine")?;
    let s = g.scale;
    Ok(cond.zip_map(uncond, |c, u| s * c - (s - 1.0) * u))
}
