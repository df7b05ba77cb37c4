//! Speaker clustering of segments within a batch.
//!
//! Segments are cut into overlapping sub-chunks, each chunk gets an
//! embedding, and the chunks are clustered spectrally: cosine affinity,
//! normalized Laplacian, eigengap for the cluster count, K-Means on the
//! row-normalized spectral embedding. Centers live in embedding space and
//! close pairs are merged. A segment is labeled only when all of its chunks
//! landed in one cluster.

mod batching;
mod centers;
mod kmeans;
mod spectral;

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batching::{batch_segments, Batch};
pub use centers::{center_of, compute_centers, merge_clusters};
pub use kmeans::{canonical_labels, kmeans, KMeansResult};
pub use spectral::{
    build_affinity, eigengap_k, estimate_k, laplacian_eigenvalues, normalized_laplacian,
    spectral_assign, AffinityMatrix, EIGENGAP_TIE_TOL,
};

use crate::backends::{BackendError, BackendRole, Clip, SpeakerEmbedder};
use crate::config::PipelineConfig;
use crate::filter::segment_similarity;
use crate::types::{cosine, AudioBuffer, DomainError, SpeakerEmbedding, TimeRange, TIME_EPS};

/// Chunk count above which the eigendecomposition runs on a subsample.
pub const MAX_EIGEN_CHUNKS: usize = 12_000;

#[derive(Debug, Error)]
pub enum DiarizeError {
    #[error("no embeddings to cluster")]
    Empty,
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("node {0} has zero degree")]
    ZeroRowSum(usize),
    #[error("need at least two chunks to estimate k, got {0}")]
    TooFewChunks(usize),
    #[error("k = {k} outside [1, {n}]")]
    BadK { k: usize, n: usize },
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("segment of {duration_s:.3}s is shorter than the {window_s}s window")]
    SegmentTooShort { duration_s: f64, window_s: f64 },
    #[error("segment {0} has no chunks")]
    NoChunks(usize),
    #[error("embedding chunk of `{recording_id}` at {start_s:.3}s: {source}")]
    Backend {
        recording_id: String,
        start_s: f64,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizeParams {
    pub window_s: f64,
    pub shift_s: f64,
    pub merge_threshold: f64,
    pub k_max: usize,
    pub seed: u64,
    pub max_eigen_chunks: usize,
}

impl DiarizeParams {
    pub fn from_config(config: &PipelineConfig) -> Self {
        Self {
            window_s: config.embed_window_s,
            shift_s: config.embed_shift_s,
            merge_threshold: config.cluster_merge_threshold,
            k_max: config.k_max,
            seed: config.rng_seed,
            max_eigen_chunks: MAX_EIGEN_CHUNKS,
        }
    }
}

impl Default for DiarizeParams {
    fn default() -> Self {
        Self::from_config(&PipelineConfig::default())
    }
}

/// Sub-chunk windows of `segment` in recording time: every `shift_s` while the
/// window fits, plus one window flush with the end if the last one falls short.
pub fn window_chunks(segment: TimeRange, window_s: f64, shift_s: f64) -> Result<Vec<TimeRange>, DiarizeError> {
    let dur = segment.duration_s();
    if dur + TIME_EPS < window_s {
        return Err(DiarizeError::SegmentTooShort {
            duration_s: dur,
            window_s,
        });
    }
    let mut out = Vec::new();
    let mut m = 0usize;
    loop {
        let offset = m as f64 * shift_s;
        if offset + window_s > dur + TIME_EPS {
            break;
        }
        out.push(TimeRange::new(segment.start_s + offset, segment.start_s + offset + window_s)?);
        m += 1;
    }
    let last_end = out.last().map_or(segment.start_s, |r| r.end_s);
    if last_end < segment.end_s - TIME_EPS {
        out.push(TimeRange::new(segment.end_s - window_s, segment.end_s)?);
    }
    Ok(out)
}

/// `Some(c)` when every chunk of a segment sits in cluster `c`.
pub fn label_segments(
    chunks_per_segment: &[Vec<usize>],
    chunk_assignments: &[usize],
) -> Result<Vec<Option<usize>>, DiarizeError> {
    chunks_per_segment
        .iter()
        .enumerate()
        .map(|(s, chunks)| {
            let first = *chunks.first().ok_or(DiarizeError::NoChunks(s))?;
            let c = chunk_assignments[first];
            Ok(chunks
                .iter()
                .all(|&i| chunk_assignments[i] == c)
                .then_some(c))
        })
        .collect()
}

/// Embeds every chunk of one recording. Chunks run concurrently; results keep
/// chunk order.
pub fn embed_chunks(
    recording_id: &str,
    audio: &AudioBuffer,
    chunks: &[TimeRange],
    embedder: &dyn SpeakerEmbedder,
) -> Result<Vec<SpeakerEmbedding>, DiarizeError> {
    let caps = embedder.capabilities();
    let backend_err = |start_s: f64, source| DiarizeError::Backend {
        recording_id: recording_id.to_string(),
        start_s,
        source,
    };
    if !caps.supports(audio.sample_rate()) {
        return Err(backend_err(
            0.0,
            BackendError::UnsupportedRate {
                role: BackendRole::SpeakerEmbedder,
                rate: audio.sample_rate(),
            },
        ));
    }
    chunks
        .par_iter()
        .map(|&chunk| {
            let (a, b) = audio.sample_bounds(chunk);
            let raw = embedder
                .embed(Clip {
                    recording_id,
                    start_s: chunk.start_s,
                    samples: &audio.samples()[a..b],
                    sample_rate: audio.sample_rate(),
                })
                .map_err(|e| backend_err(chunk.start_s, e))?;
            if let Some(d) = caps.embedding_dim {
                if raw.len() != d {
                    return Err(backend_err(
                        chunk.start_s,
                        BackendError::Failed(format!("embedding dimension {} != declared {d}", raw.len())),
                    ));
                }
            }
            Ok(SpeakerEmbedding::new(&raw, chunk)?)
        })
        .collect()
}

/// Result of clustering one flat list of chunk embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Whether the eigendecomposition ran on a subsample.
    pub subsampled: bool,
}

fn subsample_indices(n: usize, cap: usize) -> Vec<usize> {
    (0..cap).map(|j| j * n / cap).collect()
}

fn nearest_center(v: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let s = cosine(v, center);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// Full clustering of chunk embeddings: eigengap k, spectral K-Means, centers,
/// merging. Above `max_eigen_chunks` an evenly spaced subsample is clustered
/// and every other chunk goes to its nearest center.
pub fn cluster_embeddings(embeddings: &[SpeakerEmbedding], params: &DiarizeParams) -> Result<Clustering, DiarizeError> {
    let n = embeddings.len();
    if n == 0 {
        return Err(DiarizeError::Empty);
    }
    let cap = params.max_eigen_chunks.max(2);
    let subsampled = n > cap;
    let picked: Vec<SpeakerEmbedding>;
    let sample: &[SpeakerEmbedding] = if subsampled {
        picked = subsample_indices(n, cap)
            .into_iter()
            .map(|i| embeddings[i].clone())
            .collect();
        &picked
    } else {
        embeddings
    };
    let affinity = build_affinity(sample)?;
    let (_, labels) = spectral::estimate_and_assign(affinity, params.k_max, params.seed)?;
    let (labels, _) = canonical_labels(&labels);
    let centers = compute_centers(sample, &labels)?;
    let (centers, labels) = merge_clusters(sample, centers, labels, params.merge_threshold)?;
    let assignments = if subsampled {
        let idx = subsample_indices(n, cap);
        let mut out: Vec<usize> = embeddings
            .par_iter()
            .map(|e| nearest_center(&e.to_f64(), &centers))
            .collect();
        for (j, &i) in idx.iter().enumerate() {
            out[i] = labels[j];
        }
        out
    } else {
        labels
    };
    Ok(Clustering {
        centers,
        assignments,
        subsampled,
    })
}

/// Clustering outcome for one batch, as persisted in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub batch_id: usize,
    pub k: usize,
    pub centers: Vec<Vec<f64>>,
    /// Cluster of each chunk, chunks flattened in segment order.
    pub chunk_assignments: Vec<usize>,
    /// Owning segment (index into the batch) of each chunk.
    pub chunk_segments: Vec<usize>,
    pub segment_labels: Vec<Option<usize>>,
    pub segment_similarities: Vec<Option<f64>>,
    pub subsampled: bool,
}

impl ClusterModel {
    pub fn center(&self, cluster: usize) -> Option<&[f64]> {
        self.centers.get(cluster).map(Vec::as_slice)
    }
}

/// Clusters one batch. `embeddings[i]` holds the chunk embeddings of
/// `segments[i]`; segments without chunks stay unlabeled.
pub fn cluster_batch(
    batch_id: usize,
    embeddings: &[Vec<SpeakerEmbedding>],
    params: &DiarizeParams,
) -> Result<ClusterModel, DiarizeError> {
    let mut flat = Vec::new();
    let mut chunk_segments = Vec::new();
    for (s, chunks) in embeddings.iter().enumerate() {
        flat.extend(chunks.iter().cloned());
        chunk_segments.extend(std::iter::repeat_n(s, chunks.len()));
    }
    if flat.is_empty() {
        return Ok(ClusterModel {
            batch_id,
            k: 0,
            centers: Vec::new(),
            chunk_assignments: Vec::new(),
            chunk_segments,
            segment_labels: vec![None; embeddings.len()],
            segment_similarities: vec![None; embeddings.len()],
            subsampled: false,
        });
    }
    let clustering = cluster_embeddings(&flat, params)?;
    let mut per_segment: Vec<Vec<usize>> = vec![Vec::new(); embeddings.len()];
    for (i, &s) in chunk_segments.iter().enumerate() {
        per_segment[s].push(i);
    }
    let mut segment_labels = vec![None; embeddings.len()];
    let mut segment_similarities = vec![None; embeddings.len()];
    let with_chunks: Vec<usize> = (0..embeddings.len()).filter(|&s| !per_segment[s].is_empty()).collect();
    let chunk_lists: Vec<Vec<usize>> = with_chunks.iter().map(|&s| per_segment[s].clone()).collect();
    let labels = label_segments(&chunk_lists, &clustering.assignments)?;
    for (&s, label) in with_chunks.iter().zip(labels) {
        if let Some(c) = label {
            segment_labels[s] = Some(c);
            segment_similarities[s] = Some(segment_similarity(&embeddings[s], &clustering.centers[c]));
        }
    }
    Ok(ClusterModel {
        batch_id,
        k: clustering.centers.len(),
        centers: clustering.centers,
        chunk_assignments: clustering.assignments,
        chunk_segments,
        segment_labels,
        segment_similarities,
        subsampled: clustering.subsampled,
    })
}

/// Appends one sidecar row per chunk: `chunk_id<TAB>cluster<TAB>v1,...,vd`.
pub fn write_embedding_rows<'a, W: Write>(
    w: &mut W,
    rows: impl IntoIterator<Item = (&'a str, usize, &'a [f32])>,
) -> io::Result<()> {
    for (id, cluster, v) in rows {
        write!(w, "{id}\t{cluster}\t")?;
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{x}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub chunk_id: String,
    pub cluster: usize,
    pub vector: Vec<f32>,
}

pub fn read_embedding_rows<R: BufRead>(r: R) -> io::Result<Vec<EmbeddingRow>> {
    let bad = |n: usize, what: &str| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {what}", n + 1));
    r.lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.is_empty()))
        .map(|(n, line)| {
            let line = line?;
            let mut cols = line.split('\t');
            let (Some(id), Some(c), Some(v), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(bad(n, "expected three tab-separated columns"));
            };
            Ok(EmbeddingRow {
                chunk_id: id.to_string(),
                cluster: c.parse().map_err(|_| bad(n, "bad cluster index"))?,
                vector: v
                    .split(',')
                    .map(|x| x.parse::<f32>().map_err(|_| bad(n, "bad vector element")))
                    .collect::<Result<_, _>>()?,
            })
        })
        .collect()
}
