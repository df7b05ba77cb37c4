//! Input and output manifests.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::types::SpeakerLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Enhance,
    Segment,
    Cluster,
    Tse,
    Filter,
    Asr,
    Persist,
}

impl Stage {
    pub const ORDER: [Stage; 7] = [
        Stage::Enhance,
        Stage::Segment,
        Stage::Cluster,
        Stage::Tse,
        Stage::Filter,
        Stage::Asr,
        Stage::Persist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Enhance => "enhance",
            Stage::Segment => "segment",
            Stage::Cluster => "cluster",
            Stage::Tse => "tse",
            Stage::Filter => "filter",
            Stage::Asr => "asr",
            Stage::Persist => "persist",
        }
    }

    pub fn enabled(self, toggles: &crate::config::StageToggles) -> bool {
        match self {
            Stage::Enhance => toggles.enhance,
            Stage::Segment => toggles.segment,
            Stage::Cluster => toggles.cluster,
            Stage::Tse => toggles.tse,
            Stage::Filter => toggles.filter,
            Stage::Asr => toggles.asr,
            Stage::Persist => toggles.persist,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the input manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRow {
    pub recording_id: String,
    pub path: PathBuf,
    /// Externally supplied `[start_s, end_s]` pairs, used when segmentation is off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<[f64; 2]>>,
}

const RESERVED_IDS: [&str; 3] = ["checkpoints", "work", "embeddings"];

/// Recording ids become directory names, so they are restricted to a safe
/// alphabet.
pub fn check_recording_id(id: &str) -> Result<(), String> {
    if id.is_empty() {
        return Err("recording_id is empty".into());
    }
    if id.starts_with('.') || RESERVED_IDS.contains(&id) {
        return Err(format!("recording_id `{id}` is reserved"));
    }
    if let Some(c) = id
        .chars()
        .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')))
    {
        return Err(format!("recording_id `{id}` contains `{c}`"));
    }
    Ok(())
}

/// Reads the input manifest. Relative audio paths resolve against the
/// manifest's directory.
pub fn read_input_manifest(path: &Path) -> Result<Vec<InputRow>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<InputRow> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| PipelineError::Manifest {
            line: n + 1,
            message,
        };
        let mut row: InputRow = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        check_recording_id(&row.recording_id).map_err(bad)?;
        if rows.iter().any(|r| r.recording_id == row.recording_id) {
            return Err(bad(format!("duplicate recording_id `{}`", row.recording_id)));
        }
        for &[a, b] in row.segments.iter().flatten() {
            if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
                return Err(bad(format!("invalid segment [{a}, {b}]")));
            }
        }
        if row.path.is_relative() {
            row.path = base.join(&row.path);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One output row per retained segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub recording_id: String,
    pub segment_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub speaker_label: Option<SpeakerLabel>,
    pub cluster_similarity: Option<f64>,
    pub ovrl_score: Option<f64>,
    pub pdnsmos_score: Option<f64>,
    pub transcript: Option<String>,
    /// Relative to the output directory.
    pub audio_path: String,
    pub stage_flags: Vec<Stage>,
    /// Non-fatal problems, e.g. `asr_error` or `empty_transcript`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

impl ManifestRecord {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

pub fn write_manifest<W: Write>(w: &mut W, records: &[ManifestRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, line)| {
            let line = line.map_err(|e| PipelineError::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| PipelineError::Manifest {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
