use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Denoiser, ModelConfig, Pcmdm};
use crate::data::{LabelSet, Normalizer};
use crate::error::{Error, Result};
use crate::ndcore::Matrix;
use crate::schedule::ScheduleConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialized model: config echo, label vocabulary, schedule and named tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub labels: Vec<String>,
    pub schedule: ScheduleConfig,
    pub training_step: u64,
    pub seed: u64,
    /// Free-form description of the random stream used for training.
    pub rng: String,
    #[serde(default)]
    pub normalizer: Option<Normalizer>,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &Pcmdm, labels: &LabelSet, schedule: ScheduleConfig, training_step: u64, seed: u64) -> Self {
        let tensors = model
            .named_params()
            .map(|(name, m)| NamedTensor {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: model.config().clone(),
            labels: labels.names().to_vec(),
            schedule,
            training_step,
            seed,
            rng: format!("chacha8 seed={seed} steps={training_step}"),
            normalizer: model.normalizer().cloned(),
            tensors,
        }
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(self.labels.clone())
    }

    pub fn to_model(&self) -> Result<Pcmdm> {
        if self.labels.len() != self.model.num_labels {
            return Err(Error::Invalid(format!(
                "checkpoint lists {} labels but the model has {}",
                self.labels.len(),
                self.model.num_labels
            )));
        }
        let named = self
            .tensors
            .iter()
            .map(|t| Ok((t.name.clone(), Matrix::new(t.rows, t.cols, t.data.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let model = Pcmdm::from_named(self.model.clone(), named)?;
        match &self.normalizer {
            Some(n) => model.with_normalizer(n.clone()),
            None => Ok(model),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}
