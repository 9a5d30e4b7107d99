use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabelSet, LabeledStream, SegmentRecord, FRAME_DIM};
use crate::diffusion::Sequence;
use crate::error::{Error, Result};
use crate::ndcore::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentLine {
    label: String,
    start: usize,
    len: usize,
}

/// On-disk form of one stream: one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    frames: Vec<[f64; FRAME_DIM]>,
    segments: Vec<SegmentLine>,
}

impl StreamRecord {
    pub fn from_stream(stream: &LabeledStream, labels: &LabelSet) -> Result<Self> {
        let m = stream.frames().frames();
        let frames = (0..m.rows())
            .map(|r| {
                let row = m.row(r);
                [row[0], row[1], row[2], row[3]]
            })
            .collect();
        let segments = stream
            .segments()
            .iter()
            .map(|s| {
                let label = labels
                    .name(s.label)
                    .ok_or_else(|| Error::UnknownLabel(format!("#{}", s.label)))?;
                Ok(SegmentLine {
                    label: label.to_string(),
                    start: s.start,
                    len: s.len,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { frames, segments })
    }

    pub fn into_stream(self, labels: &LabelSet) -> Result<LabeledStream> {
        if self.frames.is_empty() {
            return Err(Error::Invalid("stream has no frames".into()));
        }
        let rows = self.frames.len();
        let data: Vec<f64> = self.frames.into_iter().flatten().collect();
        let frames = Sequence::new(Matrix::new(rows, FRAME_DIM, data)?)?;
        let segments = self
            .segments
            .into_iter()
            .map(|s| {
                Ok(SegmentRecord {
                    label: labels.id(&s.label)?,
                    start: s.start,
                    len: s.len,
                })
            })
            .collect::<Result<_>>()?;
        LabeledStream::new(frames, segments)
    }
}

/// Writes one stream per line, labels by name.
pub fn write_dataset(path: &Path, streams: &[LabeledStream], labels: &LabelSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in streams {
        let line = serde_json::to_string(&StreamRecord::from_stream(s, labels)?)
            .map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset file. Blank lines are skipped; errors carry the 1-based
/// line number.
pub fn read_dataset(path: &Path, labels: &LabelSet) -> Result<Vec<LabeledStream>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut streams = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let record: StreamRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let stream = record.into_stream(labels).map_err(|e| parse_err(e.to_string()))?;
        streams.push(stream);
    }
    Ok(streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dataset, DataConfig};

    #[test]
    fn round_trip_is_exact() {
        let cfg = DataConfig {
            num_streams: 100,
            test_streams: 0,
            ..DataConfig::default()
        };
        let streams = gen_dataset(&cfg).unwrap();
        let labels = cfg.label_set().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &streams, &labels).unwrap();
        assert_eq!(read_dataset(&path, &labels).unwrap(), streams);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_dataset(&path, &LabelSet::default_set()).unwrap().is_empty());
    }

    #[test]
    fn errors_name_line_and_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = r#"{"frames":[[0,0,0,0],[0,0,0,0]],"segments":[{"label":"walk","start":0,"len":2}]}"#;
        std::fs::write(&path, format!("{good}\n{{\"frames\": [\n")).unwrap();
        let err = read_dataset(&path, &LabelSet::default_set()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let unknown = good.replace("walk", "moonwalk");
        std::fs::write(&path, format!("{good}\n{good}\n{unknown}\n")).unwrap();
        let err = read_dataset(&path, &LabelSet::default_set()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 3, .. }) && msg.contains("moonwalk"), "{msg}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_dataset(Path::new("/nonexistent/x.jsonl"), &LabelSet::default_set()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn documented_golden_lines_parse() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/golden.jsonl");
        let streams = read_dataset(&path, &LabelSet::default_set()).unwrap();
        assert_eq!(streams.len(), 3);
        assert_eq!(streams[2].segments().len(), 3);
        assert_eq!(streams[0].frames().len(), 5);
    }
}
