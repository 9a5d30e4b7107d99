use super::{check_stream, finish, plain_chain, GenerationResult, PromptStream, Sampler, SamplerOptions};
use crate::denoiser::{Denoiser, PastContext};
use crate::diffusion::GuidanceConfig;
use crate::error::Result;
use crate::ndcore::{Matrix, SeedStream};
use crate::schedule::NoiseSchedule;

/// Segment-by-segment generation. Segment `i > 0` sees the last `h` frames of
/// segment `i − 1` as history; `h = 0` gives fully independent segments.
pub fn sample_autoregressive(
    denoiser: &dyn Denoiser,
    stream: &PromptStream,
    schedule: &NoiseSchedule,
    guidance: GuidanceConfig,
    h: usize,
    seed: &SeedStream,
    tag: &str,
) -> Result<GenerationResult> {
    check_stream(denoiser, stream)?;
    let mut parts: Vec<Matrix> = Vec::with_capacity(stream.len());
    for (i, p) in stream.prompts().iter().enumerate() {
        let past = match parts.last() {
            Some(prev) if h > 0 => PastContext::new(prev.slice_rows(prev.rows() - h.min(prev.rows()), h.min(prev.rows()))),
            _ => PastContext::none(),
        };
        let mut rng = seed.derive(i as u64);
        parts.push(plain_chain(denoiser, p.len, p.label, &past, schedule, guidance, &mut rng)?);
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    finish(denoiser, Matrix::vstack(&refs)?, stream, tag)
}

/// Independent per-segment chains, no history.
pub struct Independent;

impl Sampler for Independent {
    fn name(&self) -> &'static str {
        "independent"
    }

    fn sample(
        &self,
        denoiser: &dyn Denoiser,
        stream: &PromptStream,
        schedule: &NoiseSchedule,
        opts: &SamplerOptions,
        seed: &SeedStream,
    ) -> Result<GenerationResult> {
        sample_autoregressive(denoiser, stream, schedule, opts.guidance, 0, seed, self.name())
    }
}

/// Per-segment chains conditioned on the previous segment's tail.
pub struct Autoregressive;

impl Sampler for Autoregressive {
    fn name(&self) -> &'static str {
        "autoregressive"
    }

    fn sample(
        &self,
        denoiser: &dyn Denoiser,
        stream: &PromptStream,
        schedule: &NoiseSchedule,
        opts: &SamplerOptions,
        seed: &SeedStream,
    ) -> Result<GenerationResult> {
        sample_autoregressive(denoiser, stream, schedule, opts.guidance, opts.past_frames, seed, self.name())
    }
}
