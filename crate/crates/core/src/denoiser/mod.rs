//! The clean-sample predicting denoiser contract and its implementations.

mod analytic;
mod checkpoint;
mod pcmdm;
mod train;

pub use analytic::{analytic_predict_x0, AnalyticDenoiser, GaussianTarget};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use pcmdm::{ModelConfig, Pcmdm};
pub use train::{example_loss_and_grads, examples_from_streams, fit_model, train, TrainConfig, TrainReport, TrainingExample};

use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::ndcore::Matrix;

/// A segment label, or the unconditional token used for guidance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Label(usize),
    Unconditional,
}

impl Condition {
    pub fn label(self) -> Option<usize> {
        match self {
            Condition::Label(l) => Some(l),
            Condition::Unconditional => None,
        }
    }
}

/// The last `h` frames of the preceding segment; `h = 0` means no history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PastContext {
    frames: Option<Matrix>,
}

impl PastContext {
    pub fn none() -> Self {
        Self { frames: None }
    }

    pub fn new(frames: Matrix) -> Self {
        if frames.rows() == 0 {
            Self::none()
        } else {
            Self { frames: Some(frames) }
        }
    }

    pub fn frames(&self) -> Option<&Matrix> {
        self.frames.as_ref()
    }

    pub fn len(&self) -> usize {
        self.frames.as_ref().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_none()
    }
}

/// Maps `(x_t, t, condition, past)` to a prediction of the clean block.
///
/// Implementations are pure: the same inputs give the same output, and the
/// output always has the shape of `x_t`.
pub trait Denoiser: Send + Sync {
    fn kind(&self) -> &'static str;

    fn frame_dim(&self) -> usize;

    fn num_labels(&self) -> usize;

    /// History length consumed by the past encoder; 0 when there is none.
    fn past_frames(&self) -> usize;

    fn predict_x0(&self, x_t: &Matrix, t: usize, cond: Condition, past: &PastContext) -> Result<Matrix>;

    /// Map from data frames to the space the chain runs in, if not the identity.
    /// Inputs and outputs of [`Denoiser::predict_x0`] live in that space.
    fn normalizer(&self) -> Option<&Normalizer> {
        None
    }

    fn check_condition(&self, cond: Condition) -> Result<()> {
        match cond {
            Condition::Label(l) if l >= self.num_labels() => {
                Err(Error::range("label id", l, format!("< {}", self.num_labels())))
            }
            _ => Ok(()),
        }
    }
}
