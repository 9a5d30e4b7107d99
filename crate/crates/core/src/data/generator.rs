use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LabelSet, LabeledStream, SegmentRecord, FRAME_DIM};
use crate::diffusion::Sequence;
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, SeedStream};

pub const DEFAULT_LABELS: [&str; 8] = [
    "walk",
    "dash",
    "circle_cw",
    "circle_ccw",
    "zigzag",
    "sine_walk",
    "spiral",
    "halt",
];

/// Planar velocity field that drives one segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    Walk,
    Dash,
    CircleCw,
    CircleCcw,
    Zigzag,
    SineWalk,
    Spiral,
    Halt,
}

impl FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "walk" => Motion::Walk,
            "dash" => Motion::Dash,
            "circle_cw" => Motion::CircleCw,
            "circle_ccw" => Motion::CircleCcw,
            "zigzag" => Motion::Zigzag,
            "sine_walk" => Motion::SineWalk,
            "spiral" => Motion::Spiral,
            "halt" => Motion::Halt,
            other => return Err(Error::UnknownLabel(other.to_string())),
        })
    }
}

impl Motion {
    /// Per-frame velocity at local frame `k`, given the entry heading and a
    /// per-segment speed jitter.
    fn velocity(self, k: usize, heading: f64, jitter: f64) -> [f64; 2] {
        let kf = k as f64;
        let (speed, angle) = match self {
            Motion::Walk => (0.04, heading),
            Motion::Dash => (0.06, heading),
            Motion::CircleCw => (0.04, heading - 0.15 * kf),
            Motion::CircleCcw => (0.04, heading + 0.15 * kf),
            Motion::Zigzag => {
                let side = if (k / 4) % 2 == 0 { 1.0 } else { -1.0 };
                (0.04, heading + 0.6 * side)
            }
            Motion::SineWalk => (0.04, heading + 0.6 * (TAU * kf / 12.0).sin()),
            Motion::Spiral => ((0.015 + 0.0015 * kf).min(0.06), heading + 0.25 * kf),
            Motion::Halt => return [0.0, 0.0],
        };
        let s = speed * jitter;
        [s * angle.cos(), s * angle.sin()]
    }
}

/// Synthetic corpus settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Total streams generated; `test_streams` of them form the test split.
    pub num_streams: usize,
    pub test_streams: usize,
    pub segments_per_stream: [usize; 2],
    pub length_range: [usize; 2],
    pub labels: Vec<String>,
    /// Largest allowed Euclidean distance between consecutive frames.
    pub step_bound: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_streams: 2500,
            test_streams: 500,
            segments_per_stream: [2, 4],
            length_range: [16, 32],
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            step_bound: 0.15,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(self.labels.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.length_range;
        if lo < 8 || hi > 64 || lo > hi {
            return Err(Error::config(
                "data.length_range",
                format!("[{lo}, {hi}] must satisfy 8 <= min <= max <= 64"),
            ));
        }
        let [smin, smax] = self.segments_per_stream;
        if smin < 1 || smin > smax {
            return Err(Error::config(
                "data.segments_per_stream",
                format!("[{smin}, {smax}] must satisfy 1 <= min <= max"),
            ));
        }
        if self.labels.len() < 4 {
            return Err(Error::config("data.labels", "at least 4 labels are required"));
        }
        self.label_set()?;
        for l in &self.labels {
            l.parse::<Motion>()
                .map_err(|_| Error::config("data.labels", format!("no generator for label `{l}`")))?;
        }
        if self.test_streams > self.num_streams {
            return Err(Error::config("data.test_streams", "exceeds data.num_streams"));
        }
        if !(self.step_bound > 0.0) {
            return Err(Error::config("data.step_bound", "must be positive"));
        }
        Ok(())
    }
}

fn generate_stream(cfg: &DataConfig, motions: &[Motion], rng: &mut SeedStream) -> Result<LabeledStream> {
    let n_segments = rng.int_inclusive(cfg.segments_per_stream[0], cfg.segments_per_stream[1]);
    let mut pos = [rng.uniform() * 2.0 - 1.0, rng.uniform() * 2.0 - 1.0];
    let mut heading = rng.uniform() * TAU - PI;
    let mut rows: Vec<f64> = Vec::new();
    let mut segments = Vec::with_capacity(n_segments);
    let mut start = 0;
    for _ in 0..n_segments {
        let label = rng.below(motions.len());
        let len = rng.int_inclusive(cfg.length_range[0], cfg.length_range[1]);
        let jitter = 0.9 + 0.2 * rng.uniform();
        let motion = motions[label];
        let mut last_v = [0.0, 0.0];
        for k in 0..len {
            let v = motion.velocity(k, heading, jitter);
            pos[0] += v[0];
            pos[1] += v[1];
            rows.extend_from_slice(&[pos[0], pos[1], v[0], v[1]]);
            last_v = v;
        }
        if motion != Motion::Halt {
            heading = last_v[1].atan2(last_v[0]);
        }
        segments.push(SegmentRecord { label, start, len });
        start += len;
    }
    let frames = Matrix::new(start, FRAME_DIM, rows)?;
    LabeledStream::new(Sequence::new(frames)?, segments)
}

/// Largest Euclidean distance between consecutive frames.
pub(crate) fn max_step(frames: &Matrix) -> f64 {
    (1..frames.rows())
        .map(|i| {
            frames
                .row(i)
                .iter()
                .zip(frames.row(i - 1))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Generates `cfg.num_streams` streams, stream `i` from its own derived seed.
pub fn gen_dataset(cfg: &DataConfig) -> Result<Vec<LabeledStream>> {
    cfg.validate()?;
    let motions: Vec<Motion> = cfg.labels.iter().map(|l| l.parse()).collect::<Result<_>>()?;
    let root = SeedStream::new(cfg.seed);
    (0..cfg.num_streams)
        .map(|i| {
            let stream = generate_stream(cfg, &motions, &mut root.derive(i as u64))?;
            let step = max_step(stream.frames().frames());
            if step > cfg.step_bound {
                return Err(Error::Numeric(format!(
                    "stream {i} has an inter-frame step of {step}, above the bound {}",
                    cfg.step_bound
                )));
            }
            Ok(stream)
        })
        .collect()
}
