//! Labeled multi-segment trajectory streams: synthetic generation, the
//! line-delimited file format and adjacent-segment pairing.

mod generator;
mod io;

pub use generator::{gen_dataset, DataConfig, Motion, DEFAULT_LABELS};
pub use io::{read_dataset, write_dataset, StreamRecord};

use serde::{Deserialize, Serialize};

use crate::diffusion::Sequence;
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, SeedStream};

const SPLIT_STREAM: u64 = 0x5911;

/// Width of one frame: position (x, y) and per-frame velocity (vx, vy).
pub const FRAME_DIM: usize = 4;

/// Ordered label vocabulary; ids are indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::config("data.labels", "label set is empty"));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains([',', ':']) || n.chars().any(char::is_whitespace) {
                return Err(Error::config("data.labels", format!("invalid label name `{n}`")));
            }
            if names[..i].contains(n) {
                return Err(Error::config("data.labels", format!("duplicate label `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn default_set() -> Self {
        Self {
            names: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

/// One labeled span of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentRecord {
    pub label: usize,
    pub start: usize,
    pub len: usize,
}

/// A continuous trajectory and the labeled segments that tile it.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledStream {
    frames: Sequence,
    segments: Vec<SegmentRecord>,
}

impl LabeledStream {
    /// Validates that the segments tile the frame range with no gaps or overlaps.
    pub fn new(frames: Sequence, segments: Vec<SegmentRecord>) -> Result<Self> {
        let mut cursor = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.len == 0 {
                return Err(Error::Invalid(format!("segment {i} is empty")));
            }
            if s.start != cursor {
                return Err(Error::Invalid(format!(
                    "segment {i} starts at {} but previous segment ended at {cursor}",
                    s.start
                )));
            }
            cursor += s.len;
        }
        if cursor != frames.len() {
            return Err(Error::Invalid(format!(
                "segments cover {cursor} frames, stream has {}",
                frames.len()
            )));
        }
        Ok(Self { frames, segments })
    }

    pub fn frames(&self) -> &Sequence {
        &self.frames
    }

    pub fn segments(&self) -> &[SegmentRecord] {
        &self.segments
    }

    pub fn segment_frames(&self, i: usize) -> Matrix {
        let s = self.segments[i];
        self.frames.frames().slice_rows(s.start, s.len)
    }

    /// Indices `k` where segment `k` ends and `k + 1` begins, as the first
    /// frame index of the later segment.
    pub fn boundaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().skip(1).map(|s| s.start)
    }
}

/// Two adjacent segments of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPair {
    pub first: Matrix,
    pub first_label: usize,
    pub second: Matrix,
    pub second_label: usize,
    /// Last `h` frames of `first`.
    pub tail: Matrix,
}

impl SegmentPair {
    /// Both segments back to back.
    pub fn joined(&self) -> Matrix {
        Matrix::vstack(&[&self.first, &self.second]).expect("pair segments share a width")
    }
}

/// One pair per adjacent-segment boundary.
pub fn make_pairs(stream: &LabeledStream, h: usize) -> Vec<SegmentPair> {
    (0..stream.segments.len().saturating_sub(1))
        .map(|i| {
            let first = stream.segment_frames(i);
            let second = stream.segment_frames(i + 1);
            let keep = h.min(first.rows());
            let tail = first.slice_rows(first.rows() - keep, keep);
            SegmentPair {
                first,
                first_label: stream.segments[i].label,
                second,
                second_label: stream.segments[i + 1].label,
                tail,
            }
        })
        .collect()
}

/// Per-channel affine map to zero mean and unit variance, fitted on frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over every frame of every stream. Channels with no spread keep scale 1.
    pub fn fit(streams: &[LabeledStream]) -> Result<Self> {
        let dim = streams
            .first()
            .map(|s| s.frames().dim())
            .ok_or_else(|| Error::Invalid("cannot fit a normalizer on no data".into()))?;
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        for s in streams {
            let m = s.frames().frames();
            for r in 0..m.rows() {
                for (acc, v) in sum.iter_mut().zip(m.row(r)) {
                    *acc += v;
                }
            }
            count += m.rows();
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
        let mut sq = vec![0.0; dim];
        for s in streams {
            let m = s.frames().frames();
            for r in 0..m.rows() {
                for (c, v) in m.row(r).iter().enumerate() {
                    sq[c] += (v - mean[c]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .map(|v| {
                let sd = (v / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len()
            || self.std.iter().any(|s| !(s.is_finite() && *s > 0.0))
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Invalid("normalizer needs finite means and positive scales".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |r, c| (m.get(r, c) - self.mean[c]) / self.std[c])
    }

    pub fn denormalize(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) * self.std[c] + self.mean[c])
    }

    pub fn normalize_streams(&self, streams: &[LabeledStream]) -> Result<Vec<LabeledStream>> {
        streams
            .iter()
            .map(|s| {
                let frames = Sequence::new(self.normalize(s.frames().frames()))?;
                LabeledStream::new(frames, s.segments().to_vec())
            })
            .collect()
    }
}

/// Deterministic split by stream: the first `test_count` streams of a seeded
/// permutation go to the test side.
pub fn split_streams(
    streams: Vec<LabeledStream>,
    test_count: usize,
    seed: u64,
) -> (Vec<LabeledStream>, Vec<LabeledStream>) {
    let mut order: Vec<usize> = (0..streams.len()).collect();
    SeedStream::new(seed).derive(SPLIT_STREAM).shuffle(&mut order);
    let test_count = test_count.min(streams.len());
    let mut is_test = vec![false; streams.len()];
    for &i in &order[..test_count] {
        is_test[i] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in streams.into_iter().enumerate() {
        if is_test[i] {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_and_tails() {
        let frames = Matrix::from_fn(10, FRAME_DIM, |r, c| (r * 10 + c) as f64);
        let segs = vec![
            SegmentRecord { label: 0, start: 0, len: 4 },
            SegmentRecord { label: 1, start: 4, len: 3 },
            SegmentRecord { label: 2, start: 7, len: 3 },
        ];
        let s = LabeledStream::new(Sequence::new(frames.clone()).unwrap(), segs.clone()).unwrap();
        let pairs = make_pairs(&s, 2);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].tail, frames.slice_rows(2, 2));
        assert_eq!(pairs[1].first_label, 1);
        assert_eq!(pairs[1].second, frames.slice_rows(7, 3));
        assert_eq!(pairs[0].joined(), frames.slice_rows(0, 7));
        let single = LabeledStream::new(
            Sequence::new(frames.clone()).unwrap(),
            vec![SegmentRecord { label: 0, start: 0, len: 10 }],
        )
        .unwrap();
        assert!(make_pairs(&single, 2).is_empty());
        let gap = vec![SegmentRecord { label: 0, start: 0, len: 4 }, SegmentRecord { label: 1, start: 5, len: 5 }];
        assert!(LabeledStream::new(Sequence::new(frames).unwrap(), gap).is_err());
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let streams = gen_dataset(&DataConfig {
            num_streams: 30,
            test_streams: 0,
            ..DataConfig::default()
        })
        .unwrap();
        let (tr, te) = split_streams(streams.clone(), 8, 4);
        assert_eq!((tr.len(), te.len()), (22, 8));
        assert!(te.iter().all(|s| !tr.contains(s)));
        assert_eq!(split_streams(streams.clone(), 8, 4), (tr, te.clone()));
        assert_ne!(split_streams(streams, 8, 5).1, te);
    }

    #[test]
    fn normalizer_round_trip() {
        let streams = gen_dataset(&DataConfig {
            num_streams: 20,
            test_streams: 0,
            ..DataConfig::default()
        })
        .unwrap();
        let n = Normalizer::fit(&streams).unwrap();
        n.validate().unwrap();
        let normed = n.normalize_streams(&streams).unwrap();
        let refit = Normalizer::fit(&normed).unwrap();
        for c in 0..FRAME_DIM {
            assert!(refit.mean[c].abs() < 1e-9 && (refit.std[c] - 1.0).abs() < 1e-9);
        }
        let m = streams[0].frames().frames();
        assert!(n.denormalize(&n.normalize(m)).sub(m).max_abs() < 1e-12);
        assert!(Normalizer::fit(&[]).is_err());
    }
}
