//! End-to-end runs: enhance → segment → cluster → TSE → filter → ASR →
//! persist, with one checkpoint shard per recording and stage.
//!
//! Every step reads its input from the previous step's shards on disk, also
//! on a fresh run, so a resumed run sees exactly the bytes an uninterrupted
//! run would have seen. A step whose shard already exists is skipped.

mod checkpoint;
pub mod manifest;
pub mod ops;
pub mod stats;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{read_wav, read_wav_range, wav_info, write_wav, AudioError};
use crate::backends::{BackendError, BackendRole, BackendSet, Clip};
use crate::config::{ConfigError, PipelineConfig};
use crate::diarize::batch_segments;
use crate::diarize::{cluster_batch, embed_chunks, window_chunks, write_embedding_rows, ClusterModel, DiarizeError, DiarizeParams};
use crate::enhance::{enhance_recording, plan_chunks};
use crate::filter::{filter_by_quality, run_filter_chain, FilterReport, FilterThresholds, ScoreResult};
use crate::segmenter::segment_ranges_within;
use crate::types::{seconds_to_samples, AudioBuffer, Segment, SpeakerLabel, TimeRange};

pub use checkpoint::{RecordingHeader, RecordingState, SegmentEmbeddings, SegmentStatus, Store, WorkSegment};
pub use manifest::{read_input_manifest, read_manifest, InputRow, ManifestRecord, Stage};
pub use stats::{compute_stats, CorpusStats, ScoreSummary, StageRetention};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{role} backend cannot process `{recording_id}`: {message}")]
    Capability {
        role: BackendRole,
        recording_id: String,
        message: String,
    },
    #[error("stage `{stage}` is enabled but no {role} backend is configured")]
    MissingBackend { stage: Stage, role: BackendRole },
    #[error("interrupted after {checkpoints_written} checkpoint writes")]
    Interrupted { checkpoints_written: usize },
    #[error("output directory holds a run with a different config or input; rerun without --resume")]
    Fingerprint,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Diarize(#[from] DiarizeError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

impl PipelineError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn checkpoint(path: &Path, message: impl Into<String>) -> Self {
        Self::Checkpoint {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    /// Stable identifier for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Manifest { .. } => "manifest",
            Self::Io { .. } => "io",
            Self::Capability { .. } => "capability",
            Self::MissingBackend { .. } => "missing_backend",
            Self::Interrupted { .. } => "interrupted",
            Self::Fingerprint => "fingerprint",
            Self::Backend(_) => "backend",
            Self::Diarize(_) => "diarize",
            Self::Checkpoint { .. } => "checkpoint",
            Self::Audio(_) => "audio",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep existing checkpoints and skip finished steps.
    pub resume: bool,
    /// Worker threads; 0 picks the number of cores.
    pub workers: usize,
    /// Fail with `Interrupted` once this many checkpoints have been written.
    pub checkpoint_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecording {
    pub recording_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub recordings: usize,
    pub skipped: Vec<SkippedRecording>,
    pub input_duration_h: f64,
    pub segments: usize,
    pub unlabeled_segments: usize,
    pub stats: CorpusStats,
    /// Checkpoints written by this invocation; differs between resumes.
    #[serde(skip)]
    pub checkpoints_written: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunFile {
    fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchCheckpoint {
    members: Vec<String>,
    model: ClusterModel,
}

const STEP_INGEST: &str = "ingest";
const STEP_ENHANCE: &str = "enhance";
const STEP_SEGMENT: &str = "segment";
const STEP_EMBED: &str = "embed";
const STEP_CLUSTER: &str = "cluster";
const STEP_TSE: &str = "tse";
const STEP_FILTER: &str = "filter";
const STEP_ASR: &str = "asr";
const FILTER_REPORT: &str = "filter_report.json";
const OUTPUTS: [&str; 6] = [
    "manifest.jsonl",
    "manifest.unlabeled.jsonl",
    FILTER_REPORT,
    "stats.json",
    "run_summary.json",
    "run.json",
];

fn role_of(stage: Stage) -> Option<BackendRole> {
    match stage {
        Stage::Enhance => Some(BackendRole::Enhancer),
        Stage::Segment => Some(BackendRole::VoiceActivityDetector),
        Stage::Cluster => Some(BackendRole::SpeakerEmbedder),
        Stage::Tse => Some(BackendRole::TargetExtractor),
        Stage::Filter => Some(BackendRole::QualityScorer),
        Stage::Asr => Some(BackendRole::Transcriber),
        Stage::Persist => None,
    }
}

fn fingerprint(config: &PipelineConfig, manifest: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(config.to_json().as_bytes());
    h.update([0u8]);
    h.update(manifest);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn remove_path(p: &Path) -> Result<(), PipelineError> {
    let r = if p.is_dir() {
        fs::remove_dir_all(p)
    } else {
        fs::remove_file(p)
    };
    match r {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(PipelineError::io(p, e)),
        _ => Ok(()),
    }
}

/// Removes everything a previous run may have left in `out`.
fn clear_outputs(out: &Path, rows: &[InputRow]) -> Result<(), PipelineError> {
    for name in ["checkpoints", "work", "embeddings"].iter().chain(OUTPUTS.iter()) {
        remove_path(&out.join(name))?;
    }
    for r in rows {
        remove_path(&out.join(&r.recording_id))?;
    }
    Ok(())
}

fn write_wav_atomic(path: &Path, audio: &AudioBuffer) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    write_wav(&tmp, audio)?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

/// Runs the whole pipeline over the recordings in `input`, writing into `out`.
pub fn run_pipeline(
    config: &PipelineConfig,
    input: &Path,
    out: &Path,
    backends: &BackendSet,
    options: &RunOptions,
) -> Result<RunSummary, PipelineError> {
    config.check()?;
    let rows = read_input_manifest(input)?;
    for stage in Stage::ORDER {
        if let Some(role) = role_of(stage) {
            if stage.enabled(&config.stages) && backends.capabilities(role).is_none() {
                return Err(PipelineError::MissingBackend { stage, role });
            }
        }
    }
    let manifest_bytes = fs::read(input).map_err(|e| PipelineError::io(input, e))?;
    let print = fingerprint(config, &manifest_bytes);
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let run_path = out.join("run.json");
    if options.resume && run_path.exists() {
        let bytes = fs::read(&run_path).map_err(|e| PipelineError::io(&run_path, e))?;
        let prev: RunFile =
            serde_json::from_slice(&bytes).map_err(|e| PipelineError::checkpoint(&run_path, e.to_string()))?;
        if prev.fingerprint != print {
            return Err(PipelineError::Fingerprint);
        }
    } else {
        clear_outputs(out, &rows)?;
        write_output(&run_path, &pretty(&RunFile { fingerprint: print }))?;
    }

    let store = Store::new(out, options.checkpoint_budget);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| PipelineError::io(out, io::Error::other(e)))?;
    let runner = Runner {
        config,
        backends,
        store: &store,
        rows: &rows,
    };
    let mut summary = pool.install(|| runner.run())?;
    summary.checkpoints_written = store.written();
    Ok(summary)
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    backends: &'a BackendSet,
    store: &'a Store,
    rows: &'a [InputRow],
}

impl Runner<'_> {
    fn enabled(&self, stage: Stage) -> bool {
        stage.enabled(&self.config.stages)
    }

    fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(|r| r.recording_id.as_str())
    }

    fn run(&self) -> Result<RunSummary, PipelineError> {
        self.ingest()?;
        self.per_recording(STEP_ENHANCE, STEP_INGEST, |s| self.enhance(s))?;
        self.per_recording(STEP_SEGMENT, STEP_ENHANCE, |s| self.segment(s))?;
        if self.enabled(Stage::Cluster) {
            self.embed()?;
            self.cluster()?;
        } else {
            self.per_recording(STEP_CLUSTER, STEP_SEGMENT, Ok)?;
        }
        self.per_recording(STEP_TSE, STEP_CLUSTER, |s| self.tse(s))?;
        self.filter()?;
        self.per_recording(STEP_ASR, STEP_FILTER, |s| self.asr(s))?;
        self.persist()
    }

    /// Applies `f` to every recording whose `step` shard is missing. Skipped
    /// recordings pass through untouched.
    fn per_recording<F>(&self, step: &str, prev: &str, f: F) -> Result<(), PipelineError>
    where
        F: Fn(RecordingState) -> Result<RecordingState, PipelineError> + Sync,
    {
        self.rows.par_iter().try_for_each(|row| {
            if self.store.shard_path(&row.recording_id, step).exists() {
                return Ok(());
            }
            let state = self.store.read_state(&row.recording_id, prev)?;
            let state = if state.header.skipped.is_some() {
                state
            } else {
                f(state)?
            };
            self.store.write_state(step, &state)
        })
    }

    fn states(&self, step: &str) -> Result<Vec<RecordingState>, PipelineError> {
        self.ids().map(|id| self.store.read_state(id, step)).collect()
    }

    fn probe(&self, row: &InputRow) -> RecordingHeader {
        let source = std::path::absolute(&row.path).unwrap_or_else(|_| row.path.clone());
        let mut header = RecordingHeader {
            recording_id: row.recording_id.clone(),
            source: source.clone(),
            audio: source.clone(),
            sample_rate: 0,
            frames: 0,
            flags: Vec::new(),
            provided_segments: row.segments.clone(),
            skipped: None,
        };
        match wav_info(&source) {
            Ok(info) if info.frames > 0 && info.sample_rate > 0 => {
                header.sample_rate = info.sample_rate;
                header.frames = info.frames;
            }
            Ok(_) => header.skipped = Some("empty audio".into()),
            Err(e) => header.skipped = Some(format!("unreadable audio: {e}")),
        }
        if let Some(reason) = &header.skipped {
            tracing::warn!(recording = %row.recording_id, %reason, "skipping recording");
        }
        header
    }

    /// Probes every recording and checks backend rates before any work.
    fn ingest(&self) -> Result<(), PipelineError> {
        let headers: Vec<RecordingHeader> = self
            .rows
            .par_iter()
            .map(|row| {
                let path = self.store.shard_path(&row.recording_id, STEP_INGEST);
                if path.exists() {
                    Ok(self.store.read_state(&row.recording_id, STEP_INGEST)?.header)
                } else {
                    Ok(self.probe(row))
                }
            })
            .collect::<Result<_, PipelineError>>()?;
        for stage in Stage::ORDER.into_iter().filter(|&s| self.enabled(s)) {
            let Some(caps) = role_of(stage).and_then(|r| self.backends.capabilities(r)) else {
                continue;
            };
            for h in headers.iter().filter(|h| h.skipped.is_none()) {
                if !caps.supports(h.sample_rate) {
                    return Err(PipelineError::Capability {
                        role: role_of(stage).expect("role exists"),
                        recording_id: h.recording_id.clone(),
                        message: format!("sample rate {} Hz not supported", h.sample_rate),
                    });
                }
            }
        }
        headers.into_par_iter().try_for_each(|header| {
            if self.store.shard_path(&header.recording_id, STEP_INGEST).exists() {
                return Ok(());
            }
            self.store.write_state(
                STEP_INGEST,
                &RecordingState {
                    header,
                    segments: Vec::new(),
                },
            )
        })
    }

    fn skip(mut state: RecordingState, reason: String) -> RecordingState {
        tracing::warn!(recording = %state.header.recording_id, %reason, "skipping recording");
        state.header.skipped = Some(reason);
        state.segments.clear();
        state
    }

    fn enhance(&self, mut state: RecordingState) -> Result<RecordingState, PipelineError> {
        if !self.enabled(Stage::Enhance) {
            return Ok(state);
        }
        let h = &state.header;
        let audio = match read_wav(&h.source) {
            Ok(a) => a,
            Err(e) => return Ok(Self::skip(state, format!("unreadable audio: {e}"))),
        };
        let enhancer = self.backends.enhancer.as_deref().expect("checked before the run");
        let result = plan_chunks(
            audio.duration_s(),
            self.config.enhance_window_s,
            self.config.enhance_shift_s,
            audio.sample_rate(),
        )
        .and_then(|plan| enhance_recording(&audio, &plan, enhancer, &h.recording_id));
        let enhanced = match result {
            Ok(a) => a,
            Err(e) => return Ok(Self::skip(state, format!("enhance_error: {e}"))),
        };
        let rel = PathBuf::from("work").join(format!("{}.enhanced.wav", h.recording_id));
        write_wav_atomic(&self.store.resolve(&rel), &enhanced)?;
        state.header.audio = rel;
        state.header.frames = enhanced.len();
        state.header.flags.push(Stage::Enhance);
        Ok(state)
    }

    fn segment(&self, mut state: RecordingState) -> Result<RecordingState, PipelineError> {
        let h = &state.header;
        let audio = match read_wav(&self.store.resolve(&h.audio)) {
            Ok(a) => a,
            Err(e) => return Ok(Self::skip(state, format!("unreadable audio: {e}"))),
        };
        let duration = audio.duration_s();
        let ranges: Vec<TimeRange> = if self.enabled(Stage::Segment) {
            let vad = self.backends.vad.as_deref().expect("checked before the run");
            let track = vad.detect(Clip {
                recording_id: &h.recording_id,
                start_s: 0.0,
                samples: audio.samples(),
                sample_rate: audio.sample_rate(),
            });
            match track {
                Ok(t) => segment_ranges_within(&t, self.config, duration),
                Err(e) => return Ok(Self::skip(state, format!("vad_error: {e}"))),
            }
        } else {
            match &h.provided_segments {
                Some(pairs) => {
                    let mut v: Vec<TimeRange> = pairs
                        .iter()
                        .filter_map(|&[a, b]| TimeRange::new(a, b.min(duration)).ok())
                        .collect();
                    v.sort_by(|x, y| x.start_s.total_cmp(&y.start_s).then(x.end_s.total_cmp(&y.end_s)));
                    v.dedup();
                    v
                }
                None => vec![TimeRange::new(0.0, duration).map_err(DiarizeError::from)?],
            }
        };
        let mut flags = h.flags.clone();
        if self.enabled(Stage::Segment) {
            flags.push(Stage::Segment);
        }
        state.segments = ranges
            .into_iter()
            .enumerate()
            .map(|(i, r)| WorkSegment {
                segment_id: format!("{}_{i:05}", h.recording_id),
                segment: Segment::new(h.recording_id.clone(), r),
                audio: None,
                flags: flags.clone(),
                reasons: Vec::new(),
                status: SegmentStatus::Active,
            })
            .collect();
        Ok(state)
    }

    fn embed_path(&self, id: &str) -> PathBuf {
        self.store.shard_path(id, STEP_EMBED)
    }

    fn embed(&self) -> Result<(), PipelineError> {
        let embedder = self.backends.embedder.as_deref().expect("checked before the run");
        let (w, s) = (self.config.embed_window_s, self.config.embed_shift_s);
        self.rows.par_iter().try_for_each(|row| {
            let path = self.embed_path(&row.recording_id);
            if path.exists() {
                return Ok(());
            }
            let state = self.store.read_state(&row.recording_id, STEP_SEGMENT)?;
            if state.header.skipped.is_some() {
                return self.store.write_rows::<SegmentEmbeddings>(&path, &[]);
            }
            let audio = read_wav(&self.store.resolve(&state.header.audio))?;
            let per_segment: Vec<Vec<TimeRange>> = state
                .segments
                .iter()
                .map(|ws| match window_chunks(ws.segment.range, w, s) {
                    Ok(c) => Ok(c),
                    Err(DiarizeError::SegmentTooShort { .. }) => Ok(Vec::new()),
                    Err(e) => Err(e),
                })
                .collect::<Result<_, _>>()?;
            let flat: Vec<TimeRange> = per_segment.iter().flatten().copied().collect();
            let embs = embed_chunks(&row.recording_id, &audio, &flat, embedder)?;
            let mut it = embs.into_iter();
            let rows: Vec<SegmentEmbeddings> = state
                .segments
                .iter()
                .zip(per_segment)
                .map(|(ws, chunks)| {
                    let vectors = it.by_ref().take(chunks.len()).map(|e| e.vector().to_vec()).collect();
                    SegmentEmbeddings {
                        segment_id: ws.segment_id.clone(),
                        chunks,
                        vectors,
                    }
                })
                .collect();
            self.store.write_rows(&path, &rows)
        })
    }

    fn batch_path(&self, batch: usize) -> PathBuf {
        self.store.checkpoint_dir().join(format!("batch-{batch:04}.cluster.json"))
    }

    fn cluster(&self) -> Result<(), PipelineError> {
        if self.ids().all(|id| self.store.shard_path(id, STEP_CLUSTER).exists()) {
            return Ok(());
        }
        let mut states = self.states(STEP_SEGMENT)?;
        let mut segments = Vec::new();
        let mut members = Vec::new();
        let mut embeddings = Vec::new();
        for state in &states {
            let rows: Vec<SegmentEmbeddings> = self.store.read_rows(&self.embed_path(&state.header.recording_id))?;
            if rows.len() != state.segments.len() {
                return Err(PipelineError::checkpoint(
                    &self.embed_path(&state.header.recording_id),
                    "segment count differs from the segment shard",
                ));
            }
            for (ws, row) in state.segments.iter().zip(rows) {
                let mut seg = ws.segment.clone();
                seg.chunk_ranges = row.chunks.clone();
                segments.push(seg);
                members.push(ws.segment_id.clone());
                embeddings.push(row.embeddings());
            }
        }
        let batches = batch_segments(&segments, self.config.batch_max_hours, self.config.batching);
        let params = DiarizeParams::from_config(self.config);
        let models: Vec<ClusterModel> = batches
            .par_iter()
            .enumerate()
            .map(|(b, range)| {
                let path = self.batch_path(b);
                let ids = members[range.clone()].to_vec();
                if path.exists() {
                    let ck: BatchCheckpoint = self.store.read_json(&path)?;
                    if ck.members == ids {
                        return Ok(ck.model);
                    }
                }
                let model = cluster_batch(b, &embeddings[range.clone()], &params)?;
                tracing::info!(batch = b, segments = ids.len(), k = model.k, "clustered batch");
                let ck = BatchCheckpoint { members: ids, model };
                self.store.write_json(&path, &ck)?;
                Ok(ck.model)
            })
            .collect::<Result<_, PipelineError>>()?;
        for (range, model) in batches.iter().zip(&models) {
            for (j, seg) in segments[range.clone()].iter_mut().enumerate() {
                if let Some(c) = model.segment_labels[j] {
                    seg.speaker_label = Some(SpeakerLabel {
                        batch: model.batch_id,
                        cluster: c,
                    });
                    seg.cluster_similarity = model.segment_similarities[j];
                }
            }
        }
        let mut labeled = segments.into_iter();
        for state in &mut states {
            for ws in &mut state.segments {
                ws.segment = labeled.next().expect("one segment per member");
                ws.set_flag(Stage::Cluster);
            }
        }
        states.par_iter().try_for_each(|state| {
            if self.store.shard_path(&state.header.recording_id, STEP_CLUSTER).exists() {
                return Ok(());
            }
            self.store.write_state(STEP_CLUSTER, state)
        })
    }

    fn centers(&self) -> Result<BTreeMap<SpeakerLabel, Vec<f64>>, PipelineError> {
        let mut out = BTreeMap::new();
        let mut b = 0;
        loop {
            let path = self.batch_path(b);
            if !path.exists() {
                return Ok(out);
            }
            let ck: BatchCheckpoint = self.store.read_json(&path)?;
            for (c, center) in ck.model.centers.into_iter().enumerate() {
                out.insert(SpeakerLabel { batch: b, cluster: c }, center);
            }
            b += 1;
        }
    }

    fn segment_audio(&self, header: &RecordingHeader, ws: &WorkSegment) -> Result<AudioBuffer, PipelineError> {
        if let Some(p) = &ws.audio {
            return Ok(read_wav(&self.store.resolve(p))?);
        }
        let rate = header.sample_rate;
        let a = seconds_to_samples(ws.segment.range.start_s, rate);
        let b = seconds_to_samples(ws.segment.range.end_s, rate).max(a);
        Ok(read_wav_range(&self.store.resolve(&header.audio), a, b - a)?)
    }

    fn tse(&self, mut state: RecordingState) -> Result<RecordingState, PipelineError> {
        if !self.enabled(Stage::Tse) {
            return Ok(state);
        }
        let extractor = self.backends.extractor.as_deref().expect("checked before the run");
        let centers = self.centers()?;
        let header = &state.header;
        let work = PathBuf::from("work").join(&header.recording_id);
        let updated: Vec<WorkSegment> = state
            .segments
            .par_iter()
            .map(|ws| {
                let mut ws = ws.clone();
                let Some(label) = ws.segment.speaker_label.filter(|_| ws.is_live()) else {
                    return Ok(ws);
                };
                let center = centers
                    .get(&label)
                    .ok_or_else(|| PipelineError::checkpoint(&self.batch_path(label.batch), format!("no center for {label}")))?;
                let audio = self.segment_audio(header, &ws)?;
                match ops::extract_target(&audio, &ws.segment, center, extractor) {
                    Ok(extracted) => {
                        let rel = work.join(format!("{}.tse.wav", ws.segment_id));
                        write_wav_atomic(&self.store.resolve(&rel), &extracted)?;
                        ws.audio = Some(rel);
                        ws.set_flag(Stage::Tse);
                    }
                    Err(e) => {
                        tracing::warn!(segment = %ws.segment_id, error = %e, "target speech extraction failed");
                        ws.status = SegmentStatus::Dropped(ops::TSE_ERROR.into());
                        ws.reasons.push(ops::TSE_ERROR.into());
                    }
                }
                Ok(ws)
            })
            .collect::<Result<_, PipelineError>>()?;
        state.segments = updated;
        Ok(state)
    }

    fn filter(&self) -> Result<(), PipelineError> {
        let report_path = self.store.checkpoint_dir().join(FILTER_REPORT);
        if report_path.exists() && self.ids().all(|id| self.store.shard_path(id, STEP_FILTER).exists()) {
            return Ok(());
        }
        let mut states = self.states(STEP_TSE)?;
        type Key = (String, u64, u64);
        let key = |s: &Segment| (s.recording_id.clone(), s.range.start_s.to_bits(), s.range.end_s.to_bits());
        let mut index: HashMap<Key, (usize, usize)> = HashMap::new();
        let mut live = Vec::new();
        for (r, state) in states.iter().enumerate() {
            for (i, ws) in state.segments.iter().enumerate() {
                if ws.is_live() {
                    index.insert(key(&ws.segment), (r, i));
                    live.push(ws.segment.clone());
                }
            }
        }
        let speaker_rules = self.enabled(Stage::Cluster);
        let mut verdicts: HashMap<Key, (Segment, SegmentStatus)> = HashMap::new();
        let report = if self.enabled(Stage::Filter) {
            let scorer = self.backends.scorer.as_deref().expect("checked before the run");
            let score = |s: &Segment| -> ScoreResult {
                let (r, i) = index[&key(s)];
                let audio = self
                    .segment_audio(&states[r].header, &states[r].segments[i])
                    .map_err(|e| BackendError::Failed(e.to_string()))?;
                scorer.score(Clip {
                    recording_id: &s.recording_id,
                    start_s: s.range.start_s,
                    samples: audio.samples(),
                    sample_rate: audio.sample_rate(),
                })
            };
            let outcome = run_filter_chain(live, &FilterThresholds::from_config(self.config), speaker_rules, &score);
            for s in outcome.retained {
                verdicts.insert(key(&s), (s, SegmentStatus::Active));
            }
            if self.config.export_unlabeled {
                let (keep, _, _) = filter_by_quality(outcome.unlabeled, &score, self.config.ovrl_threshold);
                for s in keep {
                    verdicts.insert(key(&s), (s, SegmentStatus::Unlabeled));
                }
            }
            outcome.report
        } else {
            let n = live.len();
            let mut report = FilterReport {
                input_count: n,
                ..Default::default()
            };
            for s in live {
                let status = if !speaker_rules || s.is_labeled() {
                    SegmentStatus::Active
                } else if self.config.export_unlabeled {
                    report.dropped_by_rule.unlabeled += 1;
                    SegmentStatus::Unlabeled
                } else {
                    report.dropped_by_rule.unlabeled += 1;
                    continue;
                };
                verdicts.insert(key(&s), (s, status));
            }
            report.retained_count = n - report.dropped_by_rule.unlabeled;
            report
        };
        let flag = self.enabled(Stage::Filter);
        for state in &mut states {
            for ws in state.segments.iter_mut().filter(|ws| ws.is_live()) {
                match verdicts.remove(&key(&ws.segment)) {
                    Some((seg, status)) => {
                        ws.segment = seg;
                        ws.status = status;
                        if flag {
                            ws.set_flag(Stage::Filter);
                        }
                    }
                    None => {
                        let reason = if ws.segment.is_labeled() || !speaker_rules { "filtered" } else { "unlabeled" };
                        ws.status = SegmentStatus::Dropped(reason.into());
                    }
                }
            }
        }
        states.par_iter().try_for_each(|state| self.store.write_state(STEP_FILTER, state))?;
        self.store.write_json(&report_path, &report)
    }

    fn asr(&self, mut state: RecordingState) -> Result<RecordingState, PipelineError> {
        if !self.enabled(Stage::Asr) {
            return Ok(state);
        }
        let transcriber = self.backends.transcriber.as_deref().expect("checked before the run");
        let live: Vec<usize> = (0..state.segments.len()).filter(|&i| state.segments[i].is_live()).collect();
        let segs: Vec<Segment> = live.iter().map(|&i| state.segments[i].segment.clone()).collect();
        let header = &state.header;
        let bits = |r: TimeRange| (r.start_s.to_bits(), r.end_s.to_bits());
        let by_range: HashMap<(u64, u64), usize> = live
            .iter()
            .map(|&i| (bits(state.segments[i].segment.range), i))
            .collect();
        let results = ops::transcribe_segments(
            &segs,
            |s| {
                let ws = &state.segments[by_range[&bits(s.range)]];
                self.segment_audio(header, ws).map_err(|e| BackendError::Failed(e.to_string()))
            },
            transcriber,
        );
        for (i, t) in live.into_iter().zip(results) {
            let ws = &mut state.segments[i];
            ws.segment.transcript = t.transcript;
            ws.reasons.extend(t.reasons.into_iter().map(String::from));
            ws.set_flag(Stage::Asr);
        }
        Ok(state)
    }

    fn retention(&self, persisted: usize, persisted_s: f64) -> Result<Vec<StageRetention>, PipelineError> {
        let mut out = Vec::new();
        let steps = [
            (Stage::Segment, STEP_SEGMENT),
            (Stage::Cluster, STEP_CLUSTER),
            (Stage::Tse, STEP_TSE),
            (Stage::Filter, STEP_FILTER),
            (Stage::Asr, STEP_ASR),
        ];
        for (stage, step) in steps {
            if !self.enabled(stage) {
                continue;
            }
            let (mut n, mut secs) = (0, 0.0);
            for state in self.states(step)? {
                for ws in state.segments.iter().filter(|w| w.is_live()) {
                    n += 1;
                    secs += ws.segment.duration_s();
                }
            }
            out.push(StageRetention {
                stage: stage.to_string(),
                segments: n,
                duration_h: secs / 3600.0,
            });
        }
        out.push(StageRetention {
            stage: Stage::Persist.to_string(),
            segments: persisted,
            duration_h: persisted_s / 3600.0,
        });
        Ok(out)
    }

    fn persist(&self) -> Result<RunSummary, PipelineError> {
        let states = self.states(STEP_ASR)?;
        let write = self.enabled(Stage::Persist);
        let jobs: Vec<(&RecordingHeader, &WorkSegment)> = states
            .iter()
            .flat_map(|s| s.segments.iter().filter(|w| w.is_live()).map(move |w| (&s.header, w)))
            .collect();
        let records: Vec<(ManifestRecord, bool)> = jobs
            .par_iter()
            .map(|&(header, ws)| {
                let rel = format!("{}/{}.wav", header.recording_id, ws.segment_id);
                let mut flags = ws.flags.clone();
                if write {
                    let audio = self.segment_audio(header, ws)?;
                    write_wav_atomic(&self.store.root().join(&rel), &audio)?;
                    flags.push(Stage::Persist);
                    flags.sort();
                }
                let s = &ws.segment;
                let record = ManifestRecord {
                    recording_id: s.recording_id.clone(),
                    segment_id: ws.segment_id.clone(),
                    start_s: s.range.start_s,
                    end_s: s.range.end_s,
                    speaker_label: s.speaker_label,
                    cluster_similarity: s.cluster_similarity,
                    ovrl_score: s.ovrl_score,
                    pdnsmos_score: s.pdnsmos_score,
                    transcript: s.transcript.clone(),
                    audio_path: rel,
                    stage_flags: flags,
                    reasons: ws.reasons.clone(),
                };
                Ok((record, ws.status == SegmentStatus::Unlabeled))
            })
            .collect::<Result<_, PipelineError>>()?;
        let (unlabeled, mut main): (Vec<_>, Vec<_>) = records.into_iter().partition(|(_, u)| *u);
        let mut unlabeled: Vec<ManifestRecord> = unlabeled.into_iter().map(|(r, _)| r).collect();
        let main: Vec<ManifestRecord> = {
            main.sort_by(|a, b| order(&a.0, &b.0));
            main.into_iter().map(|(r, _)| r).collect()
        };
        unlabeled.sort_by(order);

        let root = self.store.root();
        let mut buf = Vec::new();
        manifest::write_manifest(&mut buf, &main).expect("in-memory write");
        write_output(&root.join("manifest.jsonl"), &buf)?;
        buf.clear();
        manifest::write_manifest(&mut buf, &unlabeled).expect("in-memory write");
        write_output(&root.join("manifest.unlabeled.jsonl"), &buf)?;
        let report: FilterReport = self.store.read_json(&self.store.checkpoint_dir().join(FILTER_REPORT))?;
        write_output(&root.join(FILTER_REPORT), &pretty(&report))?;

        let persisted = main.len() + unlabeled.len();
        let persisted_s: f64 = main.iter().chain(&unlabeled).map(ManifestRecord::duration_s).sum();
        let mut stats = compute_stats(&main);
        stats.retention = self.retention(persisted, persisted_s)?;
        write_output(&root.join("stats.json"), &pretty(&stats))?;

        let skipped: Vec<SkippedRecording> = states
            .iter()
            .filter_map(|s| {
                s.header.skipped.as_ref().map(|reason| SkippedRecording {
                    recording_id: s.header.recording_id.clone(),
                    reason: reason.clone(),
                })
            })
            .collect();
        let input_s: f64 = states
            .iter()
            .filter(|s| s.header.sample_rate > 0)
            .map(|s| s.header.duration_s())
            .sum();
        let summary = RunSummary {
            recordings: states.len(),
            skipped,
            input_duration_h: input_s / 3600.0,
            segments: main.len(),
            unlabeled_segments: unlabeled.len(),
            stats,
            checkpoints_written: 0,
        };
        write_output(&root.join("run_summary.json"), &pretty(&summary))?;
        Ok(summary)
    }
}

fn order(a: &ManifestRecord, b: &ManifestRecord) -> std::cmp::Ordering {
    a.recording_id
        .cmp(&b.recording_id)
        .then(a.start_s.total_cmp(&b.start_s))
        .then(a.segment_id.cmp(&b.segment_id))
}

/// Stats for a finished run: recomputed from `manifest.jsonl`, with the
/// retention table taken from `stats.json` when present.
pub fn stats_for_dir(dir: &Path) -> Result<CorpusStats, PipelineError> {
    let records = read_manifest(&dir.join("manifest.jsonl"))?;
    let mut stats = compute_stats(&records);
    let path = dir.join("stats.json");
    if path.exists() {
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        let prev: CorpusStats =
            serde_json::from_slice(&bytes).map_err(|e| PipelineError::checkpoint(&path, e.to_string()))?;
        stats.retention = prev.retention;
    }
    Ok(stats)
}

/// Writes one TSV per clustering batch to `dir/embeddings/`, one row per
/// chunk: `segment_id:chunk<TAB>cluster<TAB>vector`. Returns the row count.
pub fn export_embeddings(dir: &Path) -> Result<usize, PipelineError> {
    let store = Store::new(dir, None);
    let ck_dir = store.checkpoint_dir();
    let entries = fs::read_dir(&ck_dir).map_err(|e| PipelineError::io(&ck_dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut vectors: HashMap<String, SegmentEmbeddings> = HashMap::new();
    for name in names.iter().filter(|n| n.ends_with(".embed.jsonl")) {
        for row in store.read_rows::<SegmentEmbeddings>(&ck_dir.join(name))? {
            vectors.insert(row.segment_id.clone(), row);
        }
    }
    let out_dir = dir.join("embeddings");
    fs::create_dir_all(&out_dir).map_err(|e| PipelineError::io(&out_dir, e))?;
    let mut total = 0;
    for name in names.iter().filter(|n| n.starts_with("batch-") && n.ends_with(".cluster.json")) {
        let ck: BatchCheckpoint = store.read_json(&ck_dir.join(name))?;
        let mut next_chunk: HashMap<usize, usize> = HashMap::new();
        let mut rows = Vec::new();
        for (&seg, &cluster) in ck.model.chunk_segments.iter().zip(&ck.model.chunk_assignments) {
            let id = &ck.members[seg];
            let j = next_chunk.entry(seg).or_default();
            let emb = vectors
                .get(id)
                .and_then(|e| e.vectors.get(*j))
                .ok_or_else(|| PipelineError::checkpoint(&ck_dir.join(name), format!("no embedding for {id} chunk {j}")))?;
            rows.push((format!("{id}:{j}"), cluster, emb.as_slice()));
            *j += 1;
        }
        let mut buf = Vec::new();
        write_embedding_rows(&mut buf, rows.iter().map(|(id, c, v)| (id.as_str(), *c, *v))).expect("in-memory write");
        let file = out_dir.join(name.replace(".cluster.json", ".tsv"));
        write_output(&file, &buf)?;
        total += rows.len();
    }
    Ok(total)
}
