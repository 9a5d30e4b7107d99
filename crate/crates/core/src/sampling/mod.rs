//! Long-sequence generation from a stream of labeled prompts.
//!
//! Every strategy implements [`Sampler`] and is looked up by name in a
//! [`SamplerRegistry`]. Segment `i` always draws its randomness from child
//! stream `i` of the caller's seed, which is what makes the strategies
//! comparable frame for frame.

mod autoregressive;
mod compositional;
mod inpainting;

pub use autoregressive::{sample_autoregressive, Autoregressive, Independent};
pub use compositional::{sample_compositional, Compositional, SegmentPlan};
pub use inpainting::{build_inpaint_inputs, inpaint_chain, sample_past_inpainting, Inpainting, InpaintMask};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::denoiser::{Condition, Denoiser, PastContext};
use crate::diffusion::{ancestral_step, cfg_combine, GuidanceConfig, Sequence};
use crate::error::{Error, Result};
use crate::metrics::transition_distance;
use crate::ndcore::{Matrix, SeedStream};
use crate::schedule::NoiseSchedule;

/// One requested segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub label: usize,
    pub len: usize,
}

/// Ordered prompts; at least one, each at least one frame long.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptStream {
    prompts: Vec<Prompt>,
}

impl PromptStream {
    pub fn new(prompts: Vec<Prompt>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Invalid("prompt stream is empty".into()));
        }
        if let Some(i) = prompts.iter().position(|p| p.len == 0) {
            return Err(Error::Invalid(format!("prompt {i} requests zero frames")));
        }
        Ok(Self { prompts })
    }

    /// Parses `label:len[,label:len]...`.
    pub fn parse(spec: &str, labels: &LabelSet) -> Result<Self> {
        let prompts = spec
            .split(',')
            .map(|item| {
                let item = item.trim();
                let (name, len) = item
                    .split_once(':')
                    .ok_or_else(|| Error::Invalid(format!("stream item `{item}` is not label:length")))?;
                let len: usize = len
                    .trim()
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad length in stream item `{item}`")))?;
                Ok(Prompt {
                    label: labels.id(name.trim())?,
                    len,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(prompts)
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.prompts.iter().map(|p| p.len).sum()
    }

    pub fn min_len(&self) -> usize {
        self.prompts.iter().map(|p| p.len).min().unwrap_or(0)
    }

    /// Start frame of every segment after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.prompts
            .iter()
            .scan(0, |acc, p| {
                *acc += p.len;
                Some(*acc)
            })
            .take(self.prompts.len() - 1)
            .collect()
    }
}

/// What the denoiser sees as history while views are composed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastMode {
    /// No history token, one plain call per view.
    #[default]
    None,
    /// The `h` frames of the current iterate just before each view.
    CurrentIterate,
}

impl std::str::FromStr for PastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PastMode::None),
            "current_iterate" => Ok(PastMode::CurrentIterate),
            other => Err(Error::UnknownStrategy {
                kind: "past mode",
                name: other.to_string(),
                available: "none, current_iterate".into(),
            }),
        }
    }
}

/// Knobs shared by all samplers; each strategy reads the ones it needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerOptions {
    pub guidance: GuidanceConfig,
    /// History length `h`.
    pub past_frames: usize,
    /// Overlap length `L_Tr`.
    pub transition_len: usize,
    pub past_mode: PastMode,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            past_frames: 2,
            transition_len: 2,
            past_mode: PastMode::None,
        }
    }
}

/// A generated long sequence and its segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    pub sequence: Sequence,
    /// First frame index of every segment after the first.
    pub boundaries: Vec<usize>,
    pub sampler: String,
    pub transition_distances: Vec<f64>,
}

impl GenerationResult {
    pub fn new(sequence: Sequence, boundaries: Vec<usize>, sampler: &str) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries.last().is_some_and(|&b| b >= sequence.len()) {
            return Err(Error::Invalid("segment boundaries must increase inside the sequence".into()));
        }
        let f = sequence.frames();
        let transition_distances = boundaries
            .iter()
            .map(|&b| transition_distance(&f.slice_rows(b - 1, 1), &f.slice_rows(b, 1)))
            .collect::<Result<_>>()?;
        Ok(Self {
            sequence,
            boundaries,
            sampler: sampler.to_string(),
            transition_distances,
        })
    }

    /// Frames of segment `i`.
    pub fn segment(&self, i: usize) -> Matrix {
        let start = if i == 0 { 0 } else { self.boundaries[i - 1] };
        let end = self.boundaries.get(i).copied().unwrap_or(self.sequence.len());
        self.sequence.frames().slice_rows(start, end - start)
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() + 1
    }
}

/// A named generation strategy.
pub trait Sampler: Send + Sync {
    fn name(&self) -> &'static str;

    fn sample(
        &self,
        denoiser: &dyn Denoiser,
        stream: &PromptStream,
        schedule: &NoiseSchedule,
        opts: &SamplerOptions,
        seed: &SeedStream,
    ) -> Result<GenerationResult>;
}

/// Samplers by name, in registration order.
pub struct SamplerRegistry {
    samplers: IndexMap<&'static str, Box<dyn Sampler>>,
}

impl Default for SamplerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Independent));
        r.register(Box::new(Autoregressive));
        r.register(Box::new(Inpainting));
        r.register(Box::new(Compositional));
        r
    }
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        Self {
            samplers: IndexMap::new(),
        }
    }

    /// Adds or replaces a sampler under its own name.
    pub fn register(&mut self, sampler: Box<dyn Sampler>) {
        self.samplers.insert(sampler.name(), sampler);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Sampler> {
        self.samplers
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "sampler",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.samplers.keys().copied().collect()
    }
}

/// Guided clean-sample prediction; the unconditional branch is skipped at scale 1.
pub fn guided_x0(
    denoiser: &dyn Denoiser,
    x_t: &Matrix,
    t: usize,
    label: usize,
    past: &PastContext,
    guidance: GuidanceConfig,
) -> Result<Matrix> {
    let cond = denoiser.predict_x0(x_t, t, Condition::Label(label), past)?;
    if !guidance.needs_unconditional() {
        return Ok(cond);
    }
    let uncond = denoiser.predict_x0(x_t, t, Condition::Unconditional, past)?;
    cfg_combine(&cond, &uncond, guidance)
}

/// Full reverse chain for one block: `x_T ~ N(0, I)` then `T` ancestral steps.
pub fn plain_chain(
    denoiser: &dyn Denoiser,
    len: usize,
    label: usize,
    past: &PastContext,
    schedule: &NoiseSchedule,
    guidance: GuidanceConfig,
    rng: &mut SeedStream,
) -> Result<Matrix> {
    let mut x = rng.gaussian(len, denoiser.frame_dim());
    for t in (1..=schedule.steps()).rev() {
        let x0 = guided_x0(denoiser, &x, t, label, past, guidance)?;
        x = ancestral_step(&x, &x0, t, schedule, rng)?;
    }
    Ok(x)
}

/// Wraps a chain-space result, mapping it back to data space.
pub(crate) fn finish(denoiser: &dyn Denoiser, frames: Matrix, stream: &PromptStream, tag: &str) -> Result<GenerationResult> {
    let frames = match denoiser.normalizer() {
        Some(n) => n.denormalize(&frames),
        None => frames,
    };
    GenerationResult::new(Sequence::new(frames)?, stream.boundaries(), tag)
}

pub(crate) fn check_stream(denoiser: &dyn Denoiser, stream: &PromptStream) -> Result<()> {
    for p in stream.prompts() {
        denoiser.check_condition(Condition::Label(p.label))?;
    }
    Ok(())
}
