//! Run configuration loaded from TOML. Every section and key has a default;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::denoiser::{ModelConfig, TrainConfig};
use crate::diffusion::GuidanceConfig;
use crate::error::{Error, Result};
use crate::sampling::{PastMode, SamplerOptions};
use crate::schedule::ScheduleConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: String,
    pub h: usize,
    pub ltr: usize,
    pub s: f64,
    pub past_mode: PastMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: "compositional".into(),
            h: 2,
            ltr: 2,
            s: 2.0,
            past_mode: PastMode::None,
        }
    }
}

impl SamplerConfig {
    pub fn options(&self) -> Result<SamplerOptions> {
        let guidance = GuidanceConfig::new(self.s).map_err(|e| Error::config("sampler.s", e.to_string()))?;
        if self.ltr % 2 != 0 {
            return Err(Error::config("sampler.ltr", "must be even"));
        }
        Ok(SamplerOptions {
            guidance,
            past_frames: self.h,
            transition_len: self.ltr,
            past_mode: self.past_mode,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Two-segment streams generated per sampler.
    pub n: usize,
    pub diversity_pairs: usize,
    pub samplers: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 200,
            diversity_pairs: 300,
            samplers: vec!["independent".into(), "inpainting".into(), "compositional".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub train: PathBuf,
    pub test: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            train: "data/train.jsonl".into(),
            test: "data/test.jsonl".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].trim().to_string()).unwrap_or_default();
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build().map_err(|e| Error::config("schedule.steps", e.to_string()))?;
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.sampler.options()?;
        if self.model.num_labels != self.data.labels.len() {
            return Err(Error::config(
                "model.num_labels",
                format!("is {} but data.labels lists {}", self.model.num_labels, self.data.labels.len()),
            ));
        }
        if self.eval.n == 0 {
            return Err(Error::config("eval.n", "must be positive"));
        }
        if self.eval.diversity_pairs == 0 {
            return Err(Error::config("eval.diversity_pairs", "must be positive"));
        }
        Ok(())
    }
}
