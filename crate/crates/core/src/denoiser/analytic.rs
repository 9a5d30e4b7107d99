use super::{Condition, Denoiser, PastContext};
use crate::error::{Error, Result};
use crate::ndcore::Matrix;
use crate::schedule::NoiseSchedule;

/// Per-label data model `x0 ~ N(mean, std²·I)` with a shared per-frame mean.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianTarget {
    /// Same mean on every coordinate of a `dim`-wide frame.
    pub fn isotropic(mean: f64, std: f64, dim: usize) -> Self {
        Self {
            mean: vec![mean; dim],
            std,
        }
    }
}

/// `E[x0 | x_t]` under a Gaussian data model, element-wise.
pub fn analytic_predict_x0(x_t: &Matrix, t: usize, target: &GaussianTarget, schedule: &NoiseSchedule) -> Result<Matrix> {
    if target.mean.len() != x_t.cols() {
        return Err(Error::Shape(format!(
            "target mean has {} coordinates, frames have {}",
            target.mean.len(),
            x_t.cols()
        )));
    }
    let c = schedule.lookup(t)?;
    let var0 = target.std * target.std;
    let a = c.alpha_bar;
    let denom = a * var0 + 1.0 - a;
    let kx = a.sqrt() * var0 / denom;
    let km = (1.0 - a) / denom;
    Ok(Matrix::from_fn(x_t.rows(), x_t.cols(), |r, col| {
        kx * x_t.get(r, col) + km * target.mean[col]
    }))
}

/// Closed-form denoiser for Gaussian per-label data. Ignores history.
#[derive(Clone, Debug)]
pub struct AnalyticDenoiser {
    schedule: NoiseSchedule,
    targets: Vec<GaussianTarget>,
    unconditional: Option<GaussianTarget>,
    frame_dim: usize,
}

impl AnalyticDenoiser {
    pub fn new(schedule: NoiseSchedule, targets: Vec<GaussianTarget>) -> Result<Self> {
        let frame_dim = targets
            .first()
            .map(|t| t.mean.len())
            .ok_or_else(|| Error::Invalid("analytic denoiser needs at least one target".into()))?;
        if targets.iter().any(|t| t.mean.len() != frame_dim || !(t.std >= 0.0)) {
            return Err(Error::Invalid("inconsistent analytic targets".into()));
        }
        Ok(Self {
            schedule,
            targets,
            unconditional: None,
            frame_dim,
        })
    }

    /// Target used for [`Condition::Unconditional`].
    pub fn with_unconditional(mut self, target: GaussianTarget) -> Result<Self> {
        if target.mean.len() != self.frame_dim {
            return Err(Error::Invalid("unconditional target width mismatch".into()));
        }
        self.unconditional = Some(target);
        Ok(self)
    }

    pub fn target(&self, cond: Condition) -> Result<&GaussianTarget> {
        match cond {
            Condition::Label(l) => self
                .targets
                .get(l)
                .ok_or_else(|| Error::UnknownLabel(format!("#{l}"))),
            Condition::Unconditional => self
                .unconditional
                .as_ref()
                .ok_or_else(|| Error::Invalid("no unconditional target configured".into())),
        }
    }
}

impl Denoiser for AnalyticDenoiser {
    fn kind(&self) -> &'static str {
        "analytic"
    }

    fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    fn num_labels(&self) -> usize {
        self.targets.len()
    }

    fn past_frames(&self) -> usize {
        0
    }

    fn predict_x0(&self, x_t: &Matrix, t: usize, cond: Condition, _past: &PastContext) -> Result<Matrix> {
        analytic_predict_x0(x_t, t, self.target(cond)?, &self.schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::q_sample;
    use crate::ndcore::SeedStream;
    use crate::schedule::cosine_schedule;

    #[test]
    fn point_mass_ignores_input() {
        let s = cosine_schedule(100).unwrap();
        let target = GaussianTarget::isotropic(1.5, 0.0, 2);
        let x = SeedStream::new(1).gaussian(3, 2);
        let out = analytic_predict_x0(&x, 60, &target, &s).unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn low_noise_limit_returns_input() {
        let s = cosine_schedule(10_000).unwrap();
        let target = GaussianTarget::isotropic(3.0, 0.5, 1);
        let x = Matrix::from_rows(&[vec![0.2], vec![-1.0]]).unwrap();
        let out = analytic_predict_x0(&x, 1, &target, &s).unwrap();
        assert!(out.sub(&x).max_abs() < 1e-3);
    }

    /// Monte-Carlo oracle: draw (x0, x_t) jointly and average x0 over draws
    /// whose x_t lands in a narrow bin.
    #[test]
    fn matches_monte_carlo_conditioning() {
        let s = cosine_schedule(100).unwrap();
        let t = 50;
        let (mu, sd) = (3.0, 0.5);
        let target = GaussianTarget::isotropic(mu, sd, 1);
        let mut rng = SeedStream::new(99);
        let n = 100_000;
        let x0 = rng.gaussian(n, 1).map(|z| mu + sd * z);
        let eps = rng.gaussian(n, 1);
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        // Bin centred on the typical x_t value.
        let centre = s.lookup(t).unwrap().alpha_bar.sqrt() * mu;
        let half_width = 0.05;
        let picked: Vec<f64> = (0..n)
            .filter(|&i| (xt.as_slice()[i] - centre).abs() < half_width)
            .map(|i| x0.as_slice()[i])
            .collect();
        assert!(picked.len() > 1000);
        let mc = picked.iter().sum::<f64>() / picked.len() as f64;
        let exact = analytic_predict_x0(&Matrix::scalar(centre), t, &target, &s).unwrap().as_slice()[0];
        assert!((mc / exact - 1.0).abs() < 0.02, "mc {mc} exact {exact}");
    }

    #[test]
    fn unknown_label_rejected() {
        let s = cosine_schedule(10).unwrap();
        let d = AnalyticDenoiser::new(s, vec![GaussianTarget::isotropic(0.0, 1.0, 2)]).unwrap();
        let x = Matrix::zeros(1, 2);
        assert!(d.predict_x0(&x, 3, Condition::Label(1), &PastContext::none()).is_err());
        assert!(d.predict_x0(&x, 3, Condition::Unconditional, &PastContext::none()).is_err());
        assert!(d.predict_x0(&x, 3, Condition::Label(0), &PastContext::none()).is_ok());
    }
}
