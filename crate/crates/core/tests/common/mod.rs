#![allow(dead_code)]

//! Synthetic three-recording corpus with two planted speakers.
//!
//! Speech is a 0.5-amplitude sine between known boundaries and exact
//! silence elsewhere, so the energy VAD fires exactly on the regions. Chunk
//! embeddings come from a fixture table built from the expected segments.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use autoprep::audio::write_wav;
use autoprep::backends::mocks::{
    ConstantScorer, ConstantTranscriber, EmbeddingFixtureRow, EnergyVad, FixtureEmbedder, GainExtractor,
    IdentityEnhancer,
};
use autoprep::backends::BackendSet;
use autoprep::config::PipelineConfig;
use autoprep::diarize::window_chunks;
use autoprep::types::{AudioBuffer, TimeRange};

pub const RATE: u32 = 16_000;
pub const DURATION_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Who {
    A,
    B,
    /// First half speaker A, second half B.
    Mixed,
}

pub fn layout() -> Vec<(&'static str, Vec<(f64, f64, Who)>)> {
    use Who::*;
    vec![
        ("rec_a", vec![(1.0, 6.0, A), (8.0, 14.0, B), (16.0, 22.0, A), (24.0, 28.0, B)]),
        ("rec_b", vec![(0.5, 5.0, B), (7.0, 15.0, A), (17.0, 20.0, B)]),
        ("rec_c", vec![(2.0, 9.0, A), (11.0, 17.0, B), (19.0, 25.0, B), (26.5, 29.0, Mixed)]),
    ]
}

/// Padded regions the segmenter should produce, with their speaker.
pub fn expected_segments() -> Vec<(String, TimeRange, Who)> {
    let cfg = PipelineConfig::default();
    let mut out = Vec::new();
    for (id, regions) in layout() {
        for (s, e, who) in regions {
            let r = TimeRange::new((s - cfg.pad_s).max(0.0), (e + cfg.pad_s).min(DURATION_S)).unwrap();
            out.push((id.to_string(), r, who));
        }
    }
    out
}

fn unit(i: usize, speaker: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; 8];
    v[speaker] = 1.0;
    // Small deterministic jitter so no two chunks are identical.
    for (j, x) in v.iter_mut().enumerate().skip(2) {
        *x = 0.05 * ((i * 7 + j * 13) as f32).sin();
    }
    v
}

pub fn embedding_rows() -> Vec<EmbeddingFixtureRow> {
    let cfg = PipelineConfig::default();
    let mut rows = Vec::new();
    let mut i = 0;
    for (id, range, who) in expected_segments() {
        let mid = (range.start_s + range.end_s) / 2.0;
        for chunk in window_chunks(range, cfg.embed_window_s, cfg.embed_shift_s).unwrap() {
            let speaker = match who {
                Who::A => 0,
                Who::B => 1,
                Who::Mixed => usize::from(chunk.start_s + cfg.embed_window_s / 2.0 > mid),
            };
            rows.push(EmbeddingFixtureRow {
                recording_id: id.clone(),
                start_s: chunk.start_s,
                vector: unit(i, speaker),
            });
            i += 1;
        }
    }
    rows
}

pub fn synth_audio(regions: &[(f64, f64, Who)]) -> AudioBuffer {
    let n = (DURATION_S * f64::from(RATE)) as usize;
    let mut samples = vec![0.0f32; n];
    for &(s, e, who) in regions {
        let freq = if who == Who::B { 330.0 } else { 220.0 };
        let a = (s * f64::from(RATE)).round() as usize;
        let b = (e * f64::from(RATE)).round() as usize;
        for (k, x) in samples[a..b].iter_mut().enumerate() {
            *x = (0.5 * (2.0 * std::f64::consts::PI * freq * k as f64 / f64::from(RATE)).sin()) as f32;
        }
    }
    AudioBuffer::new(samples, RATE).unwrap()
}

pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
}

/// Writes audio, the input manifest and the embedding fixture into `dir`.
pub fn write_corpus(dir: &Path) -> Corpus {
    std::fs::create_dir_all(dir).unwrap();
    let mut manifest = String::new();
    for (id, regions) in layout() {
        write_wav(&dir.join(format!("{id}.wav")), &synth_audio(&regions)).unwrap();
        manifest.push_str(&format!("{{\"recording_id\":\"{id}\",\"path\":\"{id}.wav\"}}\n"));
    }
    let manifest_path = dir.join("input.jsonl");
    std::fs::write(&manifest_path, manifest).unwrap();
    let emb_path = dir.join("embeddings.jsonl");
    let lines: String = embedding_rows()
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    std::fs::write(&emb_path, lines).unwrap();
    Corpus {
        dir: dir.to_path_buf(),
        manifest: manifest_path,
        embeddings: emb_path,
    }
}

pub const TSE_GAIN: f32 = 0.5;

pub fn backends() -> BackendSet {
    BackendSet {
        enhancer: Some(Arc::new(IdentityEnhancer::default())),
        vad: Some(Arc::new(EnergyVad::new(0.01, 0.1))),
        embedder: Some(Arc::new(FixtureEmbedder::from_rows(embedding_rows()))),
        extractor: Some(Arc::new(GainExtractor::new(TSE_GAIN))),
        scorer: Some(Arc::new(ConstantScorer::new(3.5, Some(3.1)))),
        transcriber: Some(Arc::new(ConstantTranscriber::new("hello"))),
    }
}
