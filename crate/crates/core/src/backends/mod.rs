//! Adapters for the six model roles.
//!
//! Every neural model the pipeline relies on sits behind one of the traits
//! below. In-process mocks live in [`mocks`]; [`remote`] speaks the framed
//! protocol from [`protocol`] to an external inference process.

pub mod mocks;
pub mod protocol;
pub mod remote;
pub mod spec;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmenter::FrameTrack;

pub use protocol::{decode_frame, encode_frame, AdapterFrame, FrameHeader, ProtocolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    Enhancer,
    VoiceActivityDetector,
    SpeakerEmbedder,
    TargetExtractor,
    QualityScorer,
    Transcriber,
}

impl BackendRole {
    pub const ALL: [BackendRole; 6] = [
        BackendRole::Enhancer,
        BackendRole::VoiceActivityDetector,
        BackendRole::SpeakerEmbedder,
        BackendRole::TargetExtractor,
        BackendRole::QualityScorer,
        BackendRole::Transcriber,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendRole::Enhancer => "enhancer",
            BackendRole::VoiceActivityDetector => "voice_activity_detector",
            BackendRole::SpeakerEmbedder => "speaker_embedder",
            BackendRole::TargetExtractor => "target_extractor",
            BackendRole::QualityScorer => "quality_scorer",
            BackendRole::Transcriber => "transcriber",
        }
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{0}")]
    Failed(String),
    #[error("no fixture entry for recording `{recording_id}` at {start_s:.3}s")]
    MissingFixture { recording_id: String, start_s: f64 },
    #[error("sample rate {rate} Hz not supported by {role}")]
    UnsupportedRate { role: BackendRole, rate: u32 },
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
}

/// What a backend declared at session start. Fixed for the session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    /// `None` accepts any rate.
    #[serde(default)]
    pub sample_rates: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_hop_s: Option<f64>,
}

impl Capabilities {
    pub fn supports(&self, rate: u32) -> bool {
        self.sample_rates
            .as_ref()
            .is_none_or(|rates| rates.contains(&rate))
    }
}

/// A piece of audio handed to a backend, with enough context for fixtures.
#[derive(Debug, Clone, Copy)]
pub struct Clip<'a> {
    pub recording_id: &'a str,
    /// Position of the first sample within the recording.
    pub start_s: f64,
    pub samples: &'a [f32],
    pub sample_rate: u32,
}

/// DNSMOS-style quality prediction for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub ovrl: f64,
    #[serde(default)]
    pub pdnsmos: Option<f64>,
}

pub trait Enhancer: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    /// Must return exactly as many samples as it was given.
    fn enhance(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError>;
}

pub trait VoiceActivityDetector: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    fn detect(&self, clip: Clip<'_>) -> Result<FrameTrack, BackendError>;
}

pub trait SpeakerEmbedder: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    /// Raw (not necessarily normalized) embedding of one sub-chunk.
    fn embed(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError>;
}

pub trait TargetExtractor: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    fn extract(&self, clip: Clip<'_>, enrollment: &[f32]) -> Result<Vec<f32>, BackendError>;
}

pub trait QualityScorer: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    fn score(&self, clip: Clip<'_>) -> Result<QualityScores, BackendError>;
}

pub trait Transcriber: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    fn transcribe(&self, clip: Clip<'_>) -> Result<String, BackendError>;
}

/// The backends a run uses. Roles of disabled stages may be left empty.
#[derive(Clone, Default)]
pub struct BackendSet {
    pub enhancer: Option<Arc<dyn Enhancer>>,
    pub vad: Option<Arc<dyn VoiceActivityDetector>>,
    pub embedder: Option<Arc<dyn SpeakerEmbedder>>,
    pub extractor: Option<Arc<dyn TargetExtractor>>,
    pub scorer: Option<Arc<dyn QualityScorer>>,
    pub transcriber: Option<Arc<dyn Transcriber>>,
}

impl fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendSet")
            .field("enhancer", &self.enhancer.is_some())
            .field("vad", &self.vad.is_some())
            .field("embedder", &self.embedder.is_some())
            .field("extractor", &self.extractor.is_some())
            .field("scorer", &self.scorer.is_some())
            .field("transcriber", &self.transcriber.is_some())
            .finish()
    }
}

impl BackendSet {
    pub fn capabilities(&self, role: BackendRole) -> Option<Capabilities> {
        match role {
            BackendRole::Enhancer => self.enhancer.as_ref().map(|b| b.capabilities()),
            BackendRole::VoiceActivityDetector => self.vad.as_ref().map(|b| b.capabilities()),
            BackendRole::SpeakerEmbedder => self.embedder.as_ref().map(|b| b.capabilities()),
            BackendRole::TargetExtractor => self.extractor.as_ref().map(|b| b.capabilities()),
            BackendRole::QualityScorer => self.scorer.as_ref().map(|b| b.capabilities()),
            BackendRole::Transcriber => self.transcriber.as_ref().map(|b| b.capabilities()),
        }
    }
}
