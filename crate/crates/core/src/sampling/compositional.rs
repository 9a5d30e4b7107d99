use super::{check_stream, finish, guided_x0, GenerationResult, PastMode, PromptStream, Sampler, SamplerOptions};
use crate::denoiser::{Denoiser, PastContext};
use crate::diffusion::posterior_mean;
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, SeedStream};
use crate::schedule::NoiseSchedule;

/// Layout of overlapping per-segment views over the concatenated sequence.
///
/// All indices are 0-based and ranges half-open. View `i` extends segment `i`
/// by `L_Tr / 2` frames into each neighbor, so adjacent views share exactly
/// `L_Tr` frames centred on their boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    offsets: Vec<usize>,
    lengths: Vec<usize>,
    transition_len: usize,
    views: Vec<(usize, usize)>,
}

impl SegmentPlan {
    pub fn new(lengths: &[usize], transition_len: usize) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::Invalid("every segment needs at least one frame".into()));
        }
        if transition_len % 2 != 0 {
            return Err(Error::config("sampler.ltr", format!("transition length {transition_len} must be even")));
        }
        let min = *lengths.iter().min().unwrap();
        if transition_len > min {
            return Err(Error::config(
                "sampler.ltr",
                format!("transition length {transition_len} exceeds the shortest segment ({min})"),
            ));
        }
        let half = transition_len / 2;
        let n = lengths.len();
        let mut offsets = Vec::with_capacity(n);
        let mut acc = 0;
        for &l in lengths {
            offsets.push(acc);
            acc += l;
        }
        let views = (0..n)
            .map(|i| {
                let start = if i > 0 { offsets[i] - half } else { 0 };
                let end = offsets[i] + lengths[i] + if i + 1 < n { half } else { 0 };
                (start, end)
            })
            .collect();
        Ok(Self {
            offsets,
            lengths: lengths.to_vec(),
            transition_len,
            views,
        })
    }

    pub fn for_stream(stream: &PromptStream, transition_len: usize) -> Result<Self> {
        let lengths: Vec<usize> = stream.prompts().iter().map(|p| p.len).collect();
        Self::new(&lengths, transition_len)
    }

    pub fn total_len(&self) -> usize {
        self.offsets.last().unwrap() + self.lengths.last().unwrap()
    }

    pub fn transition_len(&self) -> usize {
        self.transition_len
    }

    pub fn num_segments(&self) -> usize {
        self.lengths.len()
    }

    pub fn views(&self) -> &[(usize, usize)] {
        &self.views
    }

    /// Weight of the left view of boundary `k` (between segments `k` and
    /// `k + 1`) at frame `i`: 1 left of the overlap, 1/2 inside, 0 right of it.
    pub fn weight_on_left(&self, i: usize, k: usize) -> f64 {
        let b = self.offsets[k + 1];
        let half = self.transition_len / 2;
        if i + half < b {
            1.0
        } else if i >= b + half {
            0.0
        } else {
            0.5
        }
    }

    /// Views covering frame `i` with their weights; one or two entries that sum to 1.
    pub fn coverage(&self, i: usize) -> Vec<(usize, f64)> {
        let seg = self.offsets.partition_point(|&o| o <= i) - 1;
        let mut out = Vec::with_capacity(2);
        if seg > 0 && i < self.views[seg - 1].1 {
            let w = self.weight_on_left(i, seg - 1);
            out.push((seg - 1, w));
            out.push((seg, 1.0 - w));
        } else if seg + 1 < self.lengths.len() && i >= self.views[seg + 1].0 {
            let w = self.weight_on_left(i, seg);
            out.push((seg, w));
            out.push((seg + 1, 1.0 - w));
        } else {
            out.push((seg, 1.0));
        }
        out
    }

    /// Cuts `m` into the per-segment views.
    pub fn split(&self, m: &Matrix) -> Result<Vec<Matrix>> {
        if m.rows() != self.total_len() {
            return Err(Error::Shape(format!(
                "sequence has {} frames, plan covers {}",
                m.rows(),
                self.total_len()
            )));
        }
        Ok(self.views.iter().map(|&(s, e)| m.slice_rows(s, e - s)).collect())
    }

    /// Per-frame weighted combination of per-view blocks. A frame with a
    /// single covering view copies it exactly.
    pub fn compose(&self, per_view: &[Matrix]) -> Result<Matrix> {
        if per_view.len() != self.views.len() {
            return Err(Error::Shape("one block per view is required".into()));
        }
        let d = per_view[0].cols();
        let mut out = Matrix::zeros(self.total_len(), d);
        for i in 0..self.total_len() {
            let cover = self.coverage(i);
            let row = |v: usize| per_view[v].row(i - self.views[v].0);
            match cover.as_slice() {
                [(v, _)] => out.row_mut(i).copy_from_slice(row(*v)),
                [(a, wa), (b, wb)] => {
                    let (ra, rb) = (row(*a), row(*b));
                    for (c, o) in out.row_mut(i).iter_mut().enumerate() {
                        *o = wa * ra[c] + wb * rb[c];
                    }
                }
                _ => unreachable!("a frame has one or two covering views"),
            }
        }
        Ok(out)
    }
}

/// Joint reverse chain over all segments: each step denoises every view under
/// its own label and averages the posterior means where views overlap.
pub fn sample_compositional(
    denoiser: &dyn Denoiser,
    stream: &PromptStream,
    schedule: &NoiseSchedule,
    opts: &SamplerOptions,
    seed: &SeedStream,
    tag: &str,
) -> Result<GenerationResult> {
    check_stream(denoiser, stream)?;
    let plan = SegmentPlan::for_stream(stream, opts.transition_len)?;
    let h = opts.past_frames;
    if opts.past_mode == PastMode::CurrentIterate && h == 0 {
        return Err(Error::config("sampler.h", "current-iterate history needs h >= 1"));
    }
    let d = denoiser.frame_dim();
    let mut rngs: Vec<SeedStream> = (0..stream.len()).map(|i| seed.derive(i as u64)).collect();
    let init: Vec<Matrix> = stream
        .prompts()
        .iter()
        .zip(rngs.iter_mut())
        .map(|(p, r)| r.gaussian(p.len, d))
        .collect();
    let mut m = Matrix::vstack(&init.iter().collect::<Vec<_>>())?;
    for t in (1..=schedule.steps()).rev() {
        let views = plan.split(&m)?;
        let mut means = Vec::with_capacity(views.len());
        for (v, (x, p)) in views.iter().zip(stream.prompts()).enumerate() {
            let start = plan.views()[v].0;
            let past = match opts.past_mode {
                PastMode::CurrentIterate if v > 0 && start >= h => PastContext::new(m.slice_rows(start - h, h)),
                _ => PastContext::none(),
            };
            let x0 = guided_x0(denoiser, x, t, p.label, &past, opts.guidance)?;
            means.push(posterior_mean(x, &x0, t, schedule)?);
        }
        m = plan.compose(&means)?;
        if t > 1 {
            let sd = schedule.lookup(t)?.posterior_var.sqrt();
            let mut row = 0;
            for (p, r) in stream.prompts().iter().zip(rngs.iter_mut()) {
                for v in m.as_mut_slice()[row * d..(row + p.len) * d].iter_mut() {
                    *v += sd * r.normal();
                }
                row += p.len;
            }
        }
    }
    finish(denoiser, m, stream, tag)
}

/// One joint chain over all segments with averaged transitions.
pub struct Compositional;

impl Sampler for Compositional {
    fn name(&self) -> &'static str {
        "compositional"
    }

    fn sample(
        &self,
        denoiser: &dyn Denoiser,
        stream: &PromptStream,
        schedule: &NoiseSchedule,
        opts: &SamplerOptions,
        seed: &SeedStream,
    ) -> Result<GenerationResult> {
        sample_compositional(denoiser, stream, schedule, opts, seed, self.name())
    }
}
