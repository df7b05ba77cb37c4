//! Deterministic in-process stand-ins for every model role.
//!
//! Fixture-backed mocks read JSONL tables keyed by `(recording_id, start_s)`;
//! start times are matched at millisecond resolution.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, Capabilities, Clip, Enhancer, QualityScorer, SpeakerEmbedder, TargetExtractor,
    Transcriber, VoiceActivityDetector,
};
use super::QualityScores;
use crate::segmenter::FrameTrack;
use crate::types::seconds_to_samples;

/// Fixture key: recording id and start time in whole milliseconds.
pub fn fixture_key(recording_id: &str, start_s: f64) -> (String, i64) {
    (recording_id.to_string(), (start_s * 1000.0).round() as i64)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BackendError> {
    let fixture_err = |message: String| BackendError::Fixture {
        path: path.display().to_string(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| fixture_err(e.to_string()))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| fixture_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line).map_err(|e| fixture_err(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct IdentityEnhancer {
    caps: Capabilities,
}

impl IdentityEnhancer {
    pub fn with_rates(rates: Vec<u32>) -> Self {
        Self {
            caps: Capabilities {
                sample_rates: Some(rates),
                ..Default::default()
            },
        }
    }
}

impl Enhancer for IdentityEnhancer {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn enhance(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError> {
        Ok(clip.samples.to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct GainEnhancer {
    gain: f32,
}

impl GainEnhancer {
    pub fn new(gain: f32) -> Self {
        Self { gain }
    }
}

impl Enhancer for GainEnhancer {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn enhance(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError> {
        Ok(clip.samples.iter().map(|s| s * self.gain).collect())
    }
}

/// Frame probability = `min(1, rms / rms_threshold)`. Test-only stand-in for a VAD.
#[derive(Debug, Clone)]
pub struct EnergyVad {
    hop_s: f64,
    rms_threshold: f64,
}

impl EnergyVad {
    pub fn new(hop_s: f64, rms_threshold: f64) -> Self {
        Self {
            hop_s,
            rms_threshold,
        }
    }
}

impl VoiceActivityDetector for EnergyVad {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            frame_hop_s: Some(self.hop_s),
            ..Default::default()
        }
    }

    fn detect(&self, clip: Clip<'_>) -> Result<FrameTrack, BackendError> {
        let hop = seconds_to_samples(self.hop_s, clip.sample_rate).max(1);
        let probs = clip
            .samples
            .chunks(hop)
            .map(|frame| {
                let rms = (frame.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>()
                    / frame.len() as f64)
                    .sqrt();
                (rms / self.rms_threshold).min(1.0) as f32
            })
            .collect();
        FrameTrack::new(probs, hop as f64 / f64::from(clip.sample_rate))
            .map_err(|e| BackendError::Failed(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingFixtureRow {
    pub recording_id: String,
    pub start_s: f64,
    pub vector: Vec<f32>,
}

/// Replays embeddings from a table; a missing key is an error.
#[derive(Debug, Clone, Default)]
pub struct FixtureEmbedder {
    table: HashMap<(String, i64), Vec<f32>>,
    dim: Option<usize>,
}

impl FixtureEmbedder {
    pub fn from_rows(rows: impl IntoIterator<Item = EmbeddingFixtureRow>) -> Self {
        let mut out = Self::default();
        for row in rows {
            out.dim.get_or_insert(row.vector.len());
            out.table
                .insert(fixture_key(&row.recording_id, row.start_s), row.vector);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_rows(read_jsonl::<EmbeddingFixtureRow>(path)?))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl SpeakerEmbedder for FixtureEmbedder {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            embedding_dim: self.dim,
            ..Default::default()
        }
    }

    fn embed(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError> {
        self.table
            .get(&fixture_key(clip.recording_id, clip.start_s))
            .cloned()
            .ok_or_else(|| BackendError::MissingFixture {
                recording_id: clip.recording_id.to_string(),
                start_s: clip.start_s,
            })
    }
}

/// Pseudo-embedding derived from a digest of the chunk's samples.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }
}

impl SpeakerEmbedder for HashEmbedder {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            embedding_dim: Some(self.dim),
            ..Default::default()
        }
    }

    fn embed(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError> {
        let mut hasher = Sha256::new();
        for s in clip.samples {
            hasher.update(s.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Ignores the enrollment and returns its input.
#[derive(Debug, Clone, Default)]
pub struct PassthroughExtractor;

impl TargetExtractor for PassthroughExtractor {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn extract(&self, clip: Clip<'_>, _enrollment: &[f32]) -> Result<Vec<f32>, BackendError> {
        Ok(clip.samples.to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct GainExtractor {
    gain: f32,
}

impl GainExtractor {
    pub fn new(gain: f32) -> Self {
        Self { gain }
    }
}

impl TargetExtractor for GainExtractor {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn extract(&self, clip: Clip<'_>, _enrollment: &[f32]) -> Result<Vec<f32>, BackendError> {
        Ok(clip.samples.iter().map(|s| s * self.gain).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreFixtureRow {
    pub recording_id: String,
    pub start_s: f64,
    #[serde(default)]
    pub ovrl: Option<f64>,
    #[serde(default)]
    pub pdnsmos: Option<f64>,
    /// Replayed as a backend failure.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedScorer {
    table: HashMap<(String, i64), ScoreFixtureRow>,
}

impl ScriptedScorer {
    pub fn from_rows(rows: impl IntoIterator<Item = ScoreFixtureRow>) -> Self {
        Self {
            table: rows
                .into_iter()
                .map(|r| (fixture_key(&r.recording_id, r.start_s), r))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_rows(read_jsonl::<ScoreFixtureRow>(path)?))
    }
}

impl QualityScorer for ScriptedScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn score(&self, clip: Clip<'_>) -> Result<QualityScores, BackendError> {
        let row = self
            .table
            .get(&fixture_key(clip.recording_id, clip.start_s))
            .ok_or_else(|| BackendError::MissingFixture {
                recording_id: clip.recording_id.to_string(),
                start_s: clip.start_s,
            })?;
        if let Some(e) = &row.error {
            return Err(BackendError::Failed(e.clone()));
        }
        let ovrl = row
            .ovrl
            .ok_or_else(|| BackendError::Failed("fixture row has no ovrl".into()))?;
        Ok(QualityScores {
            ovrl,
            pdnsmos: row.pdnsmos,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConstantScorer {
    scores: QualityScores,
}

impl ConstantScorer {
    pub fn new(ovrl: f64, pdnsmos: Option<f64>) -> Self {
        Self {
            scores: QualityScores { ovrl, pdnsmos },
        }
    }
}

impl QualityScorer for ConstantScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn score(&self, _clip: Clip<'_>) -> Result<QualityScores, BackendError> {
        Ok(self.scores)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptFixtureRow {
    pub recording_id: String,
    pub start_s: f64,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedTranscriber {
    table: HashMap<(String, i64), TranscriptFixtureRow>,
}

impl ScriptedTranscriber {
    pub fn from_rows(rows: impl IntoIterator<Item = TranscriptFixtureRow>) -> Self {
        Self {
            table: rows
                .into_iter()
                .map(|r| (fixture_key(&r.recording_id, r.start_s), r))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_rows(read_jsonl::<TranscriptFixtureRow>(path)?))
    }
}

impl Transcriber for ScriptedTranscriber {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn transcribe(&self, clip: Clip<'_>) -> Result<String, BackendError> {
        let row = self
            .table
            .get(&fixture_key(clip.recording_id, clip.start_s))
            .ok_or_else(|| BackendError::MissingFixture {
                recording_id: clip.recording_id.to_string(),
                start_s: clip.start_s,
            })?;
        match (&row.error, &row.text) {
            (Some(e), _) => Err(BackendError::Failed(e.clone())),
            (None, Some(t)) => Ok(t.clone()),
            (None, None) => Err(BackendError::Failed("fixture row has no text".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstantTranscriber {
    text: String,
}

impl ConstantTranscriber {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl Transcriber for ConstantTranscriber {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn transcribe(&self, _clip: Clip<'_>) -> Result<String, BackendError> {
        Ok(self.text.clone())
    }
}
