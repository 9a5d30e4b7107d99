//! Sampler comparison over held-out segment pairs, and the parameter grid
//! built on top of it.

use serde::Serialize;

use crate::data::{make_pairs, LabeledStream};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::{diversity, features, frechet_distance, label_consistency, LabelCentroids};
use crate::ndcore::SeedStream;
use crate::sampling::{Prompt, PromptStream, Sampler, SamplerOptions, SamplerRegistry};
use crate::schedule::NoiseSchedule;

const DIVERSITY_STREAM: u64 = 0xD1;

/// Reference statistics and prompts derived from real data.
pub struct EvalData {
    prompts: Vec<PromptStream>,
    real_test: Vec<Vec<f64>>,
    real_train: Option<Vec<Vec<f64>>>,
    centroids: LabelCentroids,
}

fn pair_features(streams: &[LabeledStream]) -> Vec<Vec<f64>> {
    streams
        .iter()
        .flat_map(|s| make_pairs(s, 0))
        .map(|p| features(&p.joined()))
        .collect()
}

fn segment_features(streams: &[LabeledStream]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut f = Vec::new();
    let mut l = Vec::new();
    for s in streams {
        for (i, seg) in s.segments().iter().enumerate() {
            f.push(features(&s.segment_frames(i)));
            l.push(seg.label);
        }
    }
    (f, l)
}

impl EvalData {
    /// `n` two-segment prompts taken from the test pairs in file order (cycling
    /// if there are fewer). Label centroids come from `train` when given,
    /// otherwise from `test`.
    pub fn new(train: Option<&[LabeledStream]>, test: &[LabeledStream], num_labels: usize, n: usize) -> Result<Self> {
        let pairs: Vec<_> = test.iter().flat_map(|s| make_pairs(s, 0)).collect();
        if pairs.len() < 2 {
            return Err(Error::Invalid("evaluation needs at least two test segment pairs".into()));
        }
        if n == 0 {
            return Err(Error::config("eval.n", "must be positive"));
        }
        let prompts = (0..n)
            .map(|j| {
                let p = &pairs[j % pairs.len()];
                PromptStream::new(vec![
                    Prompt {
                        label: p.first_label,
                        len: p.first.rows(),
                    },
                    Prompt {
                        label: p.second_label,
                        len: p.second.rows(),
                    },
                ])
            })
            .collect::<Result<_>>()?;
        let real_test = pairs.iter().map(|p| features(&p.joined())).collect();
        let (cf, cl) = segment_features(train.unwrap_or(test));
        let centroids = LabelCentroids::fit(&cf, &cl, num_labels)?;
        Ok(Self {
            prompts,
            real_test,
            real_train: train.map(pair_features),
            centroids,
        })
    }

    pub fn prompts(&self) -> &[PromptStream] {
        &self.prompts
    }

    /// Fréchet distance between real train and real test pair features.
    pub fn real_frechet(&self) -> Result<Option<f64>> {
        self.real_train
            .as_ref()
            .map(|tr| frechet_distance(tr, &self.real_test))
            .transpose()
    }

    pub fn real_test_features(&self) -> &[Vec<f64>] {
        &self.real_test
    }
}

/// Metrics for one sampler setting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplerMetrics {
    pub sampler: String,
    pub transition_median: f64,
    pub transition_mean: f64,
    pub frechet: f64,
    pub diversity: f64,
    pub label_consistency: f64,
    #[serde(skip)]
    pub transitions: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Generates one sequence per prompt (prompt `j` from child stream `j` of
/// `seed`) and scores them against the real data.
pub fn evaluate_sampler(
    data: &EvalData,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    sampler: &dyn Sampler,
    opts: &SamplerOptions,
    seed: u64,
    diversity_pairs: usize,
) -> Result<SamplerMetrics> {
    let root = SeedStream::new(seed);
    let mut transitions = Vec::with_capacity(data.prompts.len());
    let mut joined = Vec::with_capacity(data.prompts.len());
    let mut seg_feats = Vec::new();
    let mut seg_labels = Vec::new();
    for (j, prompt) in data.prompts.iter().enumerate() {
        let r = sampler.sample(denoiser, prompt, schedule, opts, &root.derive(j as u64))?;
        transitions.extend_from_slice(&r.transition_distances);
        joined.push(features(r.sequence.frames()));
        for (i, p) in prompt.prompts().iter().enumerate() {
            seg_feats.push(features(&r.segment(i)));
            seg_labels.push(p.label);
        }
    }
    let div = if joined.len() >= 2 {
        diversity(&joined, diversity_pairs, &mut root.derive(DIVERSITY_STREAM))?
    } else {
        0.0
    };
    let frechet = if joined.len() >= 2 {
        frechet_distance(&joined, &data.real_test)?
    } else {
        f64::NAN
    };
    Ok(SamplerMetrics {
        sampler: sampler.name().to_string(),
        transition_median: median(&transitions),
        transition_mean: transitions.iter().sum::<f64>() / transitions.len() as f64,
        frechet,
        diversity: div,
        label_consistency: label_consistency(&seg_feats, &seg_labels, &data.centroids)?,
        transitions,
    })
}

/// One row per sampler plus real-data reference numbers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub seed: u64,
    pub real_frechet: Option<f64>,
    pub rows: Vec<SamplerMetrics>,
    /// Median transition distance ordered compositional < inpainting <
    /// independent; absent unless all three were evaluated.
    pub ordering_holds: Option<bool>,
}

impl EvalReport {
    pub fn row(&self, sampler: &str) -> Option<&SamplerMetrics> {
        self.rows.iter().find(|r| r.sampler == sampler)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        for r in &self.rows {
            out.push_str(&csv_metrics(r));
            out.push('\n');
        }
        out
    }
}

const CSV_HEADER: &str = "sampler,transition_median,transition_mean,frechet,diversity,label_consistency\n";

fn csv_metrics(r: &SamplerMetrics) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.sampler, r.transition_median, r.transition_mean, r.frechet, r.diversity, r.label_consistency
    )
}

pub fn evaluate(
    data: &EvalData,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    registry: &SamplerRegistry,
    samplers: &[String],
    opts: &SamplerOptions,
    seed: u64,
    diversity_pairs: usize,
) -> Result<EvalReport> {
    if samplers.is_empty() {
        return Err(Error::config("eval.samplers", "no samplers selected"));
    }
    let rows = samplers
        .iter()
        .map(|name| {
            let s = registry.get(name)?;
            evaluate_sampler(data, denoiser, schedule, s, opts, seed, diversity_pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    let med = |name: &str| rows.iter().find(|r| r.sampler == name).map(|r| r.transition_median);
    let ordering_holds = match (med("compositional"), med("inpainting"), med("independent")) {
        (Some(c), Some(p), Some(i)) => Some(c < p && p < i),
        _ => None,
    };
    Ok(EvalReport {
        n: data.prompts.len(),
        seed,
        real_frechet: data.real_frechet()?,
        rows,
        ordering_holds,
    })
}

/// Parameter swept by one grid axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationParam {
    /// History length, swept under inpainting.
    H,
    /// Transition length, swept under compositional sampling.
    Ltr,
    /// Guidance scale, swept under compositional sampling.
    S,
}

impl AblationParam {
    pub fn name(self) -> &'static str {
        match self {
            AblationParam::H => "h",
            AblationParam::Ltr => "ltr",
            AblationParam::S => "s",
        }
    }

    pub fn sampler(self) -> &'static str {
        match self {
            AblationParam::H => "inpainting",
            AblationParam::Ltr | AblationParam::S => "compositional",
        }
    }

    fn apply(self, base: &SamplerOptions, value: f64) -> Result<SamplerOptions> {
        let mut o = *base;
        let as_count = |field: &str| {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(format!("grid.{field}"), format!("{value} is not a whole number")))
            }
        };
        match self {
            AblationParam::H => o.past_frames = as_count("h")?,
            AblationParam::Ltr => o.transition_len = as_count("ltr")?,
            AblationParam::S => o.guidance = crate::diffusion::GuidanceConfig::new(value)?,
        }
        Ok(o)
    }
}

/// Axes of a sweep, each varied on its own around the base options.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub axes: Vec<(AblationParam, Vec<f64>)>,
}

impl AblationGrid {
    pub const DEFAULT_SPEC: &'static str = "h=2,4,8,12;ltr=2,4,8,12;s=1,2,3,5";

    /// Parses `name=v1,v2;name=v3` with names `h`, `ltr`, `s`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |msg: String| Error::config("grid", msg);
        let mut axes = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("axis `{part}` is not name=values")))?;
            let param = match name.trim() {
                "h" => AblationParam::H,
                "ltr" => AblationParam::Ltr,
                "s" => AblationParam::S,
                other => return Err(bad(format!("unknown axis `{other}` (expected h, ltr or s)"))),
            };
            if axes.iter().any(|(p, _)| *p == param) {
                return Err(bad(format!("axis `{}` given twice", param.name())));
            }
            let values = values
                .split(',')
                .map(|v| {
                    let v = v.trim();
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| bad(format!("bad value `{v}` for axis `{}`", param.name())))
                })
                .collect::<Result<Vec<_>>>()?;
            axes.push((param, values));
        }
        if axes.is_empty() {
            return Err(bad("grid is empty".into()));
        }
        Ok(Self { axes })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub param: AblationParam,
    pub value: f64,
    pub metrics: SamplerMetrics,
}

/// Evaluates every grid point; rows follow axis order then value order.
pub fn run_ablation(
    data: &EvalData,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    registry: &SamplerRegistry,
    base: &SamplerOptions,
    grid: &AblationGrid,
    seed: u64,
    diversity_pairs: usize,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for (param, values) in &grid.axes {
        let sampler = registry.get(param.sampler())?;
        for &value in values {
            let opts = param.apply(base, value)?;
            let metrics = evaluate_sampler(data, denoiser, schedule, sampler, &opts, seed, diversity_pairs)?;
            rows.push(AblationRow {
                param: *param,
                value,
                metrics,
            });
        }
    }
    Ok(rows)
}

pub const ABLATION_HEADER: &str =
    "param,value,sampler,transition_median,transition_mean,frechet,diversity,label_consistency\n";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.param.name(), r.value, csv_metrics(&r.metrics)));
    }
    out
}
