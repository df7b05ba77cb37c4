//! Chunk-wise enhancement of long recordings.
//!
//! A fixed-context enhancer sees overlapping windows (`window` long, `shift`
//! apart). Only the middle `shift` of each output is kept; the first chunk also
//! keeps its lead-in and the last chunk keeps everything through the end of the
//! recording, so the kept regions tile the signal exactly. Boundaries are
//! computed in samples so the tiling is exact rather than approximate.

use rayon::prelude::*;
use thiserror::Error;

use crate::backends::{BackendError, Clip, Enhancer};
use crate::types::{seconds_to_samples, AudioBuffer, TimeRange};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("window ({window_s}s) must exceed shift ({shift_s}s), both positive")]
    BadWindow { window_s: f64, shift_s: f64 },
    #[error("window or shift is shorter than one sample at {0} Hz")]
    SubSampleWindow(u32),
    #[error("plan covers {plan} samples but audio has {audio}")]
    PlanMismatch { plan: usize, audio: usize },
    #[error("enhancer failed on chunk {chunk}: {source}")]
    Backend {
        chunk: usize,
        #[source]
        source: BackendError,
    },
    #[error("enhancer returned {got} samples for chunk {chunk}, expected {expected}")]
    LengthMismatch {
        chunk: usize,
        expected: usize,
        got: usize,
    },
}

/// One inference window and the part of its output that is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkEntry {
    /// Sample range fed to the backend (clipped to the recording).
    pub infer: (usize, usize),
    /// Sample range of the recording taken from this chunk's output.
    pub emit: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPlan {
    entries: Vec<ChunkEntry>,
    sample_rate: u32,
    total_samples: usize,
    window_samples: usize,
}

impl ChunkPlan {
    pub fn entries(&self) -> &[ChunkEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn total_samples(&self) -> usize {
        self.total_samples
    }

    pub fn total_duration_s(&self) -> f64 {
        self.total_samples as f64 / f64::from(self.sample_rate)
    }

    /// Length every chunk is padded to before inference.
    pub fn window_samples(&self) -> usize {
        self.window_samples
    }

    fn to_time(&self, (a, b): (usize, usize)) -> TimeRange {
        let r = f64::from(self.sample_rate);
        TimeRange::raw(a as f64 / r, b as f64 / r)
    }

    pub fn infer_ranges(&self) -> Vec<TimeRange> {
        self.entries.iter().map(|e| self.to_time(e.infer)).collect()
    }

    pub fn emit_ranges(&self) -> Vec<TimeRange> {
        self.entries.iter().map(|e| self.to_time(e.emit)).collect()
    }
}

/// Plans chunk-wise inference over `total_samples` samples.
pub fn plan_chunk_samples(
    total_samples: usize,
    window: usize,
    shift: usize,
) -> Vec<ChunkEntry> {
    if total_samples <= window {
        return vec![ChunkEntry {
            infer: (0, total_samples),
            emit: (0, total_samples),
        }];
    }
    let count = (total_samples - window).div_ceil(shift) + 1;
    let margin = (window - shift) / 2;
    (0..count)
        .map(|j| {
            let start = j * shift;
            let emit_start = if j == 0 { 0 } else { start + margin };
            let emit_end = if j + 1 == count {
                total_samples
            } else {
                start + margin + shift
            };
            ChunkEntry {
                infer: (start, (start + window).min(total_samples)),
                emit: (emit_start, emit_end),
            }
        })
        .collect()
}

pub fn plan_chunks(
    duration_s: f64,
    window_s: f64,
    shift_s: f64,
    sample_rate: u32,
) -> Result<ChunkPlan, EnhanceError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(EnhanceError::NonPositiveDuration(duration_s));
    }
    if !(shift_s > 0.0 && window_s > shift_s) {
        return Err(EnhanceError::BadWindow { window_s, shift_s });
    }
    let total = seconds_to_samples(duration_s, sample_rate);
    let window = seconds_to_samples(window_s, sample_rate);
    let shift = seconds_to_samples(shift_s, sample_rate);
    if total == 0 {
        return Err(EnhanceError::NonPositiveDuration(duration_s));
    }
    if shift == 0 || window <= shift {
        return Err(EnhanceError::SubSampleWindow(sample_rate));
    }
    Ok(ChunkPlan {
        entries: plan_chunk_samples(total, window, shift),
        sample_rate,
        total_samples: total,
        window_samples: window,
    })
}

/// Runs `enhancer` over every planned chunk and stitches the kept regions.
///
/// Chunks shorter than the window are zero-padded before inference and the
/// padding is discarded afterwards. Chunks run in parallel; assembly is by
/// emit offset, so the result does not depend on completion order.
pub fn enhance_recording(
    audio: &AudioBuffer,
    plan: &ChunkPlan,
    enhancer: &dyn Enhancer,
    recording_id: &str,
) -> Result<AudioBuffer, EnhanceError> {
    if plan.total_samples != audio.len() {
        return Err(EnhanceError::PlanMismatch {
            plan: plan.total_samples,
            audio: audio.len(),
        });
    }
    let rate = audio.sample_rate();
    let samples = audio.samples();

    // Emit ranges tile the output in order, so each chunk owns one slice.
    let mut stitched = vec![0.0f32; audio.len()];
    let mut targets = Vec::with_capacity(plan.entries.len());
    let mut rest = stitched.as_mut_slice();
    for entry in &plan.entries {
        let (head, tail) = rest.split_at_mut(entry.emit.1 - entry.emit.0);
        targets.push(head);
        rest = tail;
    }
    plan.entries
        .par_iter()
        .zip(targets)
        .enumerate()
        .try_for_each(|(chunk, (entry, target))| {
            let (a, b) = entry.infer;
            let padded;
            let input: &[f32] = if b - a < plan.window_samples {
                let mut v = samples[a..b].to_vec();
                v.resize(plan.window_samples, 0.0);
                padded = v;
                &padded
            } else {
                &samples[a..b]
            };
            let clip = Clip {
                recording_id,
                start_s: a as f64 / f64::from(rate),
                samples: input,
                sample_rate: rate,
            };
            let out = enhancer
                .enhance(clip)
                .map_err(|source| EnhanceError::Backend { chunk, source })?;
            if out.len() != input.len() {
                return Err(EnhanceError::LengthMismatch {
                    chunk,
                    expected: input.len(),
                    got: out.len(),
                });
            }
            target.copy_from_slice(&out[entry.emit.0 - a..entry.emit.1 - a]);
            Ok(())
        })?;
    debug_assert_eq!(stitched.len(), audio.len());
    AudioBuffer::new(stitched, rate).map_err(|e| EnhanceError::Backend {
        chunk: 0,
        source: BackendError::Failed(e.to_string()),
    })
}
