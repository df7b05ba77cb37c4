//! WAV ingest and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

use crate::types::{AudioBuffer, DomainError};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported sample format ({bits}-bit {format:?})")]
    Unsupported {
        path: String,
        bits: u16,
        format: SampleFormat,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: String,
        #[source]
        source: DomainError,
    },
}

/// Sample rate, frame count and channel count from the header alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub frames: usize,
    pub channels: u16,
}

impl WavInfo {
    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / f64::from(self.sample_rate)
    }
}

fn open(path: &Path) -> Result<WavReader<std::io::BufReader<std::fs::File>>, AudioError> {
    WavReader::open(path).map_err(|source| AudioError::Wav {
        path: path.display().to_string(),
        source,
    })
}

pub fn wav_info(path: &Path) -> Result<WavInfo, AudioError> {
    let reader = open(path)?;
    let spec = reader.spec();
    Ok(WavInfo {
        sample_rate: spec.sample_rate,
        frames: reader.duration() as usize,
        channels: spec.channels,
    })
}

fn decode<R: std::io::Read>(
    reader: &mut WavReader<R>,
    path: &Path,
    samples: usize,
) -> Result<Vec<f32>, AudioError> {
    let spec = reader.spec();
    let name = || path.display().to_string();
    let wav_err = |source| AudioError::Wav { path: name(), source };
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .take(samples)
            .collect::<Result<_, _>>()
            .map_err(wav_err),
        (SampleFormat::Int, bits @ 1..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .take(samples)
                .map(|s| s.map(|v| (f64::from(v) * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(wav_err)
        }
        (format, bits) => Err(AudioError::Unsupported {
            path: name(),
            bits,
            format,
        }),
    }
}

/// Reads a PCM or float WAV, downmixing to mono. Integer samples are scaled
/// to [-1, 1).
pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let mut reader = open(path)?;
    let spec = reader.spec();
    let total = reader.len() as usize;
    let interleaved = decode(&mut reader, path, total)?;
    AudioBuffer::from_interleaved(&interleaved, usize::from(spec.channels), spec.sample_rate).map_err(
        |source| AudioError::Invalid {
            path: path.display().to_string(),
            source,
        },
    )
}

/// Reads `frames` frames starting at frame `start`, clamped to the file.
pub fn read_wav_range(path: &Path, start: usize, frames: usize) -> Result<AudioBuffer, AudioError> {
    let mut reader = open(path)?;
    let spec = reader.spec();
    let total = reader.duration() as usize;
    let start = start.min(total);
    let frames = frames.min(total - start);
    reader.seek(start as u32).map_err(|e| AudioError::Wav {
        path: path.display().to_string(),
        source: hound::Error::IoError(e),
    })?;
    let channels = usize::from(spec.channels);
    let interleaved = decode(&mut reader, path, frames * channels)?;
    AudioBuffer::from_interleaved(&interleaved, channels, spec.sample_rate).map_err(|source| {
        AudioError::Invalid {
            path: path.display().to_string(),
            source,
        }
    })
}

/// Writes mono 32-bit float WAV at the buffer's native rate.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), AudioError> {
    let wav_err = |source| AudioError::Wav {
        path: path.display().to_string(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in audio.samples() {
        writer.write_sample(s).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
