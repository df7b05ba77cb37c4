//! Per-segment target speech extraction and transcription.

use rayon::prelude::*;

use crate::backends::{BackendError, Clip, TargetExtractor, Transcriber};
use crate::types::{AudioBuffer, Segment};

pub const TSE_ERROR: &str = "tse_error";
pub const ASR_ERROR: &str = "asr_error";
pub const EMPTY_TRANSCRIPT: &str = "empty_transcript";

/// Runs TSE on one segment with its cluster center as the enrollment.
/// The output keeps the input's length and rate.
pub fn extract_target(
    audio: &AudioBuffer,
    segment: &Segment,
    center: &[f64],
    extractor: &dyn TargetExtractor,
) -> Result<AudioBuffer, BackendError> {
    if segment.speaker_label.is_none() {
        return Err(BackendError::Failed("segment has no speaker label".into()));
    }
    let enrollment: Vec<f32> = center.iter().map(|&x| x as f32).collect();
    let out = extractor.extract(
        Clip {
            recording_id: &segment.recording_id,
            start_s: segment.range.start_s,
            samples: audio.samples(),
            sample_rate: audio.sample_rate(),
        },
        &enrollment,
    )?;
    if out.len() != audio.len() {
        return Err(BackendError::Failed(format!(
            "extractor returned {} samples for {}",
            out.len(),
            audio.len()
        )));
    }
    AudioBuffer::new(out, audio.sample_rate()).map_err(|e| BackendError::Failed(e.to_string()))
}

/// Transcript and reason codes for one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcription {
    pub transcript: Option<String>,
    pub reasons: Vec<&'static str>,
}

/// Transcribes segments concurrently. A failure leaves the transcript null
/// with `asr_error`; an empty transcript is kept and tagged.
pub fn transcribe_segments<F>(segments: &[Segment], audio_of: F, transcriber: &dyn Transcriber) -> Vec<Transcription>
where
    F: Fn(&Segment) -> Result<AudioBuffer, BackendError> + Sync,
{
    segments
        .par_iter()
        .map(|s| {
            let result = audio_of(s).and_then(|audio| {
                transcriber.transcribe(Clip {
                    recording_id: &s.recording_id,
                    start_s: s.range.start_s,
                    samples: audio.samples(),
                    sample_rate: audio.sample_rate(),
                })
            });
            match result {
                Ok(text) if text.is_empty() => Transcription {
                    transcript: Some(text),
                    reasons: vec![EMPTY_TRANSCRIPT],
                },
                Ok(text) => Transcription {
                    transcript: Some(text),
                    reasons: vec![],
                },
                Err(e) => {
                    tracing::warn!(recording = %s.recording_id, start_s = s.range.start_s, error = %e, "transcription failed");
                    Transcription {
                        transcript: None,
                        reasons: vec![ASR_ERROR],
                    }
                }
            }
        })
        .collect()
}
