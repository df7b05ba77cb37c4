//! Domain values shared by every stage.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when comparing times that were derived from frame or sample
/// arithmetic.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid time range [{start}, {end})")]
    InvalidRange { start: f64, end: f64 },
    #[error("embedding is empty or has zero norm")]
    DegenerateEmbedding,
    #[error("embedding contains a non-finite value")]
    NonFiniteEmbedding,
}

/// Converts seconds to a sample index, rounding half up.
pub fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    let x = seconds * f64::from(sample_rate);
    if x <= 0.0 {
        0
    } else {
        (x + 0.5).floor() as usize
    }
}

/// Mono audio at its native sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DomainError> {
        if sample_rate == 0 {
            return Err(DomainError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DomainError::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Averages interleaved channels into one.
    pub fn from_interleaved(
        interleaved: &[f32],
        channels: usize,
        sample_rate: u32,
    ) -> Result<Self, DomainError> {
        let channels = channels.max(1);
        let samples = if channels == 1 {
            interleaved.to_vec()
        } else {
            let scale = 1.0 / channels as f32;
            interleaved
                .chunks_exact(channels)
                .map(|frame| frame.iter().sum::<f32>() * scale)
                .collect()
        };
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Sample-index bounds of `range`, clamped to the buffer.
    pub fn sample_bounds(&self, range: TimeRange) -> (usize, usize) {
        let start = seconds_to_samples(range.start_s, self.sample_rate).min(self.len());
        let end = seconds_to_samples(range.end_s, self.sample_rate).min(self.len());
        (start, end.max(start))
    }

    pub fn slice(&self, range: TimeRange) -> AudioBuffer {
        let (start, end) = self.sample_bounds(range);
        AudioBuffer {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Half-open interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeRange {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, DomainError> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(DomainError::InvalidRange {
                start: start_s,
                end: end_s,
            });
        }
        Ok(Self { start_s, end_s })
    }

    /// Builds a range without validation. Callers guarantee `0 <= start < end`.
    pub(crate) const fn raw(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, other: &TimeRange) -> bool {
        other.start_s >= self.start_s - TIME_EPS && other.end_s <= self.end_s + TIME_EPS
    }

    pub fn approx_eq(&self, other: &TimeRange, tol: f64) -> bool {
        (self.start_s - other.start_s).abs() <= tol && (self.end_s - other.end_s).abs() <= tol
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.3}, {:.3})", self.start_s, self.end_s)
    }
}

/// Batch-scoped speaker identity, rendered as `batch.cluster`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpeakerLabel {
    pub batch: usize,
    pub cluster: usize,
}

impl fmt::Display for SpeakerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.batch, self.cluster)
    }
}

impl std::str::FromStr for SpeakerLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (batch, cluster) = s
            .split_once('.')
            .ok_or_else(|| format!("speaker label `{s}` is not of the form batch.cluster"))?;
        Ok(Self {
            batch: batch.parse().map_err(|_| format!("bad batch in `{s}`"))?,
            cluster: cluster.parse().map_err(|_| format!("bad cluster in `{s}`"))?,
        })
    }
}

impl Serialize for SpeakerLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpeakerLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A stretch of one recording plus whatever the stages have attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub recording_id: String,
    pub range: TimeRange,
    #[serde(default)]
    pub chunk_ranges: Vec<TimeRange>,
    #[serde(default)]
    pub speaker_label: Option<SpeakerLabel>,
    #[serde(default)]
    pub cluster_similarity: Option<f64>,
    #[serde(default)]
    pub ovrl_score: Option<f64>,
    #[serde(default)]
    pub pdnsmos_score: Option<f64>,
    #[serde(default)]
    pub transcript: Option<String>,
}

impl Segment {
    pub fn new(recording_id: impl Into<String>, range: TimeRange) -> Self {
        Self {
            recording_id: recording_id.into(),
            range,
            chunk_ranges: Vec::new(),
            speaker_label: None,
            cluster_similarity: None,
            ovrl_score: None,
            pdnsmos_score: None,
            transcript: None,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.range.duration_s()
    }

    pub fn is_labeled(&self) -> bool {
        self.speaker_label.is_some()
    }
}

/// Unit-norm speaker vector for one sub-chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f32>,
    source_chunk: TimeRange,
}

impl SpeakerEmbedding {
    /// Normalizes `raw` to unit L2 norm.
    pub fn new(raw: &[f32], source_chunk: TimeRange) -> Result<Self, DomainError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NonFiniteEmbedding);
        }
        let norm = raw
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if raw.is_empty() || norm == 0.0 {
            return Err(DomainError::DegenerateEmbedding);
        }
        let vector = raw.iter().map(|&v| (f64::from(v) / norm) as f32).collect();
        Ok(Self {
            vector,
            source_chunk,
        })
    }

    /// Rebuilds an embedding that was normalized before being stored.
    /// Renormalizing could move the last bit and break resume equivalence.
    pub(crate) fn from_unit(vector: Vec<f32>, source_chunk: TimeRange) -> Self {
        Self {
            vector,
            source_chunk,
        }
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn source_chunk(&self) -> TimeRange {
        self.source_chunk
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Cosine similarity computed in double precision.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// L2-normalizes in place; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}
