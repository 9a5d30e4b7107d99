use super::{check_stream, finish, guided_x0, plain_chain, GenerationResult, PromptStream, Sampler, SamplerOptions};
use crate::denoiser::{Denoiser, PastContext};
use crate::diffusion::{ancestral_step, GuidanceConfig};
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, SeedStream};
use crate::schedule::NoiseSchedule;

/// Known-frame mask over `h + L_Y` frames: the first `h` are known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InpaintMask {
    known: Vec<bool>,
}

impl InpaintMask {
    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn known_len(&self) -> usize {
        self.known.iter().take_while(|&&k| k).count()
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// `m ⊙ reference + (1 − m) ⊙ x`, row-wise.
    pub fn overwrite(&self, x: &mut Matrix, reference: &Matrix) {
        for (r, &k) in self.known.iter().enumerate() {
            if k {
                x.row_mut(r).copy_from_slice(reference.row(r));
            }
        }
    }
}

/// Reference block `[tail; 0]` and its mask.
pub fn build_inpaint_inputs(tail: &Matrix, len_y: usize) -> Result<(Matrix, InpaintMask)> {
    let h = tail.rows();
    if h == 0 {
        return Err(Error::Invalid("inpainting needs at least one history frame".into()));
    }
    let reference = Matrix::vstack(&[tail, &Matrix::zeros(len_y, tail.cols())])?;
    let known = (0..h + len_y).map(|r| r < h).collect();
    Ok((reference, InpaintMask { known }))
}

/// Full `h + L_Y` chain with the history prefix overwritten in every step's
/// clean estimate. `observe(t, x0)` sees each overwritten estimate.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_chain(
    denoiser: &dyn Denoiser,
    label: usize,
    tail: &Matrix,
    len_y: usize,
    schedule: &NoiseSchedule,
    guidance: GuidanceConfig,
    rng: &mut SeedStream,
    mut observe: impl FnMut(usize, &Matrix),
) -> Result<Matrix> {
    if len_y == 0 {
        return Err(Error::Invalid("inpainting needs at least one new frame".into()));
    }
    let (reference, mask) = build_inpaint_inputs(tail, len_y)?;
    // A past-conditioned model built for this history length also gets it as a token.
    let past = if denoiser.past_frames() == tail.rows() {
        PastContext::new(tail.clone())
    } else {
        PastContext::none()
    };
    let mut x = rng.gaussian(mask.len(), tail.cols());
    for t in (1..=schedule.steps()).rev() {
        let mut x0 = guided_x0(denoiser, &x, t, label, &past, guidance)?;
        mask.overwrite(&mut x0, &reference);
        observe(t, &x0);
        x = ancestral_step(&x, &x0, t, schedule, rng)?;
    }
    Ok(x)
}

/// The `L_Y` new frames of [`inpaint_chain`].
pub fn sample_past_inpainting(
    denoiser: &dyn Denoiser,
    label: usize,
    tail: &Matrix,
    len_y: usize,
    schedule: &NoiseSchedule,
    guidance: GuidanceConfig,
    rng: &mut SeedStream,
) -> Result<Matrix> {
    let chain = inpaint_chain(denoiser, label, tail, len_y, schedule, guidance, rng, |_, _| {})?;
    Ok(chain.slice_rows(tail.rows(), len_y))
}

/// First segment from a plain chain, every later one inpainted after the
/// previous segment's last `h` frames.
pub struct Inpainting;

impl Sampler for Inpainting {
    fn name(&self) -> &'static str {
        "inpainting"
    }

    fn sample(
        &self,
        denoiser: &dyn Denoiser,
        stream: &PromptStream,
        schedule: &NoiseSchedule,
        opts: &SamplerOptions,
        seed: &SeedStream,
    ) -> Result<GenerationResult> {
        check_stream(denoiser, stream)?;
        let h = opts.past_frames;
        if h == 0 {
            return Err(Error::config("sampler.h", "inpainting needs h >= 1"));
        }
        let mut parts: Vec<Matrix> = Vec::with_capacity(stream.len());
        for (i, p) in stream.prompts().iter().enumerate() {
            let mut rng = seed.derive(i as u64);
            let block = match parts.last() {
                None => plain_chain(denoiser, p.len, p.label, &PastContext::none(), schedule, opts.guidance, &mut rng)?,
                Some(prev) => {
                    let keep = h.min(prev.rows());
                    let tail = prev.slice_rows(prev.rows() - keep, keep);
                    sample_past_inpainting(denoiser, p.label, &tail, p.len, schedule, opts.guidance, &mut rng)?
                }
            };
            parts.push(block);
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        finish(denoiser, Matrix::vstack(&refs)?, stream, self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_for_two_by_four() {
        let tail = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let (r, m) = build_inpaint_inputs(&tail, 4).unwrap();
        assert_eq!(m.known(), &[true, true, false, false, false, false]);
        assert_eq!(m.known_len(), 2);
        assert_eq!(r.slice_rows(0, 2), tail);
        assert!(r.slice_rows(2, 4).as_slice().iter().all(|&v| v == 0.0));
        assert!(build_inpaint_inputs(&Matrix::zeros(0, 2), 4).is_err());
    }
}
