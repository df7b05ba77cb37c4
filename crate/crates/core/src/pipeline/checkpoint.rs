//! Per-recording, per-stage checkpoint shards under `out/checkpoints/`.
//!
//! Each shard is JSONL: a [`RecordingHeader`] line followed by one
//! [`WorkSegment`] line per segment. Files are written to a temporary name
//! and renamed into place, so a shard is either complete or absent.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::manifest::Stage;
use super::PipelineError;
use crate::types::{Segment, SpeakerEmbedding, TimeRange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub recording_id: String,
    pub source: PathBuf,
    /// Audio later stages read: the source, or enhanced audio relative to
    /// the output directory.
    pub audio: PathBuf,
    pub sample_rate: u32,
    pub frames: usize,
    pub flags: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provided_segments: Option<Vec<[f64; 2]>>,
    /// Set when the recording was abandoned; later stages pass it through.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl RecordingHeader {
    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / f64::from(self.sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStatus {
    #[default]
    Active,
    /// Passed quality but has no speaker label; goes to the unlabeled manifest.
    Unlabeled,
    Dropped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkSegment {
    pub segment_id: String,
    pub segment: Segment,
    /// Segment-level audio (TSE output), relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    pub flags: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
    #[serde(default)]
    pub status: SegmentStatus,
}

impl WorkSegment {
    pub fn is_live(&self) -> bool {
        !matches!(self.status, SegmentStatus::Dropped(_))
    }

    pub fn set_flag(&mut self, stage: Stage) {
        if !self.flags.contains(&stage) {
            self.flags.push(stage);
            self.flags.sort();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingState {
    pub header: RecordingHeader,
    pub segments: Vec<WorkSegment>,
}

/// Embeddings of one segment's chunks as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEmbeddings {
    pub segment_id: String,
    pub chunks: Vec<TimeRange>,
    pub vectors: Vec<Vec<f32>>,
}

impl SegmentEmbeddings {
    pub fn embeddings(&self) -> Vec<SpeakerEmbedding> {
        self.chunks
            .iter()
            .zip(&self.vectors)
            .map(|(&c, v)| SpeakerEmbedding::from_unit(v.clone(), c))
            .collect()
    }
}

/// Output directory plus the write budget used to simulate interruption.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    budget: Option<AtomicUsize>,
    written: AtomicUsize,
}

impl Store {
    pub fn new(root: &Path, budget: Option<usize>) -> Self {
        Self {
            root: root.to_path_buf(),
            budget: budget.map(AtomicUsize::new),
            written: AtomicUsize::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn work_dir(&self) -> PathBuf {
        self.root.join("work")
    }

    pub fn written(&self) -> usize {
        self.written.load(Ordering::SeqCst)
    }

    pub fn shard_path(&self, recording_id: &str, step: &str) -> PathBuf {
        self.checkpoint_dir().join(format!("{recording_id}.{step}.jsonl"))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Consumes one unit of budget, failing once it is spent.
    fn charge(&self) -> Result<(), PipelineError> {
        if let Some(b) = &self.budget {
            b.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
                .map_err(|_| PipelineError::Interrupted {
                    checkpoints_written: self.written(),
                })?;
        }
        Ok(())
    }

    /// Writes `bytes` to `path` via a temporary file and rename. Counts
    /// against the budget.
    pub fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        self.charge()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| PipelineError::io(&tmp, e))?;
        f.sync_all().map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))?;
        self.written.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    pub fn write_state(&self, step: &str, state: &RecordingState) -> Result<(), PipelineError> {
        let mut buf = serde_json::to_vec(&state.header).expect("header serializes");
        buf.push(b'\n');
        for s in &state.segments {
            serde_json::to_writer(&mut buf, s).expect("segment serializes");
            buf.push(b'\n');
        }
        self.write_atomic(&self.shard_path(&state.header.recording_id, step), &buf)
    }

    pub fn read_state(&self, recording_id: &str, step: &str) -> Result<RecordingState, PipelineError> {
        let path = self.shard_path(recording_id, step);
        let mut lines = read_lines(&path)?.into_iter();
        let header = match lines.next() {
            Some((n, l)) => parse(&path, n, &l)?,
            None => return Err(PipelineError::checkpoint(&path, "empty shard")),
        };
        let segments = lines
            .map(|(n, l)| parse(&path, n, &l))
            .collect::<Result<_, _>>()?;
        Ok(RecordingState { header, segments })
    }

    pub fn write_rows<T: Serialize>(&self, path: &Path, rows: &[T]) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).expect("row serializes");
            buf.push(b'\n');
        }
        self.write_atomic(path, &buf)
    }

    pub fn read_rows<T: DeserializeOwned>(&self, path: &Path) -> Result<Vec<T>, PipelineError> {
        read_lines(path)?
            .into_iter()
            .map(|(n, l)| parse(path, n, &l))
            .collect()
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), PipelineError> {
        let mut buf = serde_json::to_vec_pretty(value).expect("value serializes");
        buf.push(b'\n');
        self.write_atomic(path, &buf)
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::checkpoint(path, e.to_string()))
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, PipelineError> {
    let f = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if !line.is_empty() {
            out.push((n + 1, line));
        }
    }
    Ok(out)
}

fn parse<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T, PipelineError> {
    serde_json::from_str(text).map_err(|e| PipelineError::checkpoint(path, format!("line {line}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> RecordingState {
        RecordingState {
            header: RecordingHeader {
                recording_id: "r1".into(),
                source: "/data/r1.wav".into(),
                audio: "work/r1.enhanced.wav".into(),
                sample_rate: 16_000,
                frames: 160_000,
                flags: vec![Stage::Enhance],
                provided_segments: None,
                skipped: None,
            },
            segments: vec![WorkSegment {
                segment_id: "r1_00000".into(),
                segment: Segment::new("r1", TimeRange::new(0.1, 2.0 / 3.0 + 1.0).unwrap()),
                audio: None,
                flags: vec![Stage::Segment],
                reasons: vec![],
                status: SegmentStatus::Dropped("tse_error".into()),
            }],
        }
    }

    #[test]
    fn state_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path(), None);
        let s = state();
        store.write_state("segment", &s).unwrap();
        assert_eq!(store.read_state("r1", "segment").unwrap(), s);
        assert!(!store.shard_path("r1", "segment").with_extension("tmp").exists());
    }

    #[test]
    fn budget_interrupts_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path(), Some(1));
        store.write_state("a", &state()).unwrap();
        let err = store.write_state("b", &state()).unwrap_err();
        assert!(matches!(err, PipelineError::Interrupted { checkpoints_written: 1 }));
        assert!(!store.shard_path("r1", "b").exists());
    }

    #[test]
    fn flags_stay_canonical() {
        let mut w = state().segments.remove(0);
        w.set_flag(Stage::Persist);
        w.set_flag(Stage::Enhance);
        w.set_flag(Stage::Persist);
        assert_eq!(w.flags, vec![Stage::Enhance, Stage::Segment, Stage::Persist]);
    }
}
