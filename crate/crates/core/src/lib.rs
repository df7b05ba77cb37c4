//! Speech-corpus preprocessing: enhancement, VAD segmentation, speaker
//! clustering, target speech extraction, quality filtering and transcription,
//! with every neural model behind a pluggable backend.

pub mod backends;
pub mod config;
pub mod enhance;
pub mod segmenter;
pub mod types;
pub mod audio;
pub mod diarize;
pub mod filter;
pub mod pipeline;
