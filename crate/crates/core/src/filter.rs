//! Quality filtering: segment-to-center similarity, cluster reliability and
//! DNSMOS OVRL. Every threshold keeps values equal to it.
//!
//! One pass of the three rules is not idempotent: dropping low-quality
//! segments can remove the one that kept a cluster's maximum similarity
//! above its threshold. [`run_filter_chain`] therefore repeats the pass on
//! its own output until nothing changes. Scores are cached on the segments,
//! so each segment is scored at most once.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, QualityScores};
use crate::config::PipelineConfig;
use crate::types::{cosine, normalize, Segment, SpeakerEmbedding, SpeakerLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    pub seg_sim: f64,
    pub cluster_avg: f64,
    pub cluster_max: f64,
    pub ovrl: f64,
}

impl FilterThresholds {
    pub fn from_config(config: &PipelineConfig) -> Self {
        Self {
            seg_sim: config.seg_sim_threshold,
            cluster_avg: config.cluster_avg_threshold,
            cluster_max: config.cluster_max_threshold,
            ovrl: config.ovrl_threshold,
        }
    }
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self::from_config(&PipelineConfig::default())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedCounts {
    pub segment_similarity: usize,
    pub cluster_reliability: usize,
    pub quality_score: usize,
    pub unlabeled: usize,
    pub scorer_error: usize,
}

impl DroppedCounts {
    pub fn total(&self) -> usize {
        self.segment_similarity
            + self.cluster_reliability
            + self.quality_score
            + self.unlabeled
            + self.scorer_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub label: SpeakerLabel,
    pub size: usize,
    pub avg_similarity: f64,
    pub max_similarity: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub retained_count: usize,
    pub dropped_by_rule: DroppedCounts,
    /// Stats from the last pass in which each cluster was evaluated.
    pub clusters: Vec<ClusterStats>,
    /// Passes until the chain reached a fixpoint.
    pub passes: usize,
}

impl FilterReport {
    pub fn reconciles(&self) -> bool {
        self.input_count == self.retained_count + self.dropped_by_rule.total()
    }
}

/// Cosine between the normalized mean of a segment's chunk embeddings and
/// its cluster center.
pub fn segment_similarity(chunks: &[SpeakerEmbedding], center: &[f64]) -> f64 {
    let mut mean = vec![0.0; center.len()];
    for c in chunks {
        for (m, &x) in mean.iter_mut().zip(c.vector()) {
            *m += f64::from(x);
        }
    }
    normalize(&mut mean);
    cosine(&mean, center)
}

/// Returns (retained, dropped for low similarity, dropped as unlabeled).
pub fn filter_by_segment_similarity(segments: Vec<Segment>, threshold: f64) -> (Vec<Segment>, Vec<Segment>, Vec<Segment>) {
    let mut keep = Vec::new();
    let mut low = Vec::new();
    let mut unlabeled = Vec::new();
    for s in segments {
        match (s.speaker_label, s.cluster_similarity) {
            (Some(_), Some(sim)) if sim >= threshold => keep.push(s),
            (Some(_), Some(_)) => low.push(s),
            _ => unlabeled.push(s),
        }
    }
    (keep, low, unlabeled)
}

/// Per-cluster size, mean and max similarity over labeled segments.
pub fn cluster_stats(segments: &[Segment]) -> BTreeMap<SpeakerLabel, (usize, f64, f64)> {
    let mut acc: BTreeMap<SpeakerLabel, (usize, f64, f64)> = BTreeMap::new();
    for s in segments {
        if let (Some(label), Some(sim)) = (s.speaker_label, s.cluster_similarity) {
            let e = acc.entry(label).or_insert((0, 0.0, f64::NEG_INFINITY));
            e.0 += 1;
            e.1 += sim;
            e.2 = e.2.max(sim);
        }
    }
    for e in acc.values_mut() {
        e.1 /= e.0 as f64;
    }
    acc
}

/// A cluster goes when its mean similarity is below `avg` and its maximum
/// is below `max`. Returns (retained, dropped, stats).
pub fn filter_by_cluster_reliability(
    segments: Vec<Segment>,
    avg: f64,
    max: f64,
) -> (Vec<Segment>, Vec<Segment>, Vec<ClusterStats>) {
    let stats: Vec<ClusterStats> = cluster_stats(&segments)
        .into_iter()
        .map(|(label, (size, a, m))| ClusterStats {
            label,
            size,
            avg_similarity: a,
            max_similarity: m,
            dropped: a < avg && m < max,
        })
        .collect();
    let dropped_label = |l: &Option<SpeakerLabel>| {
        stats
            .iter()
            .any(|c| c.dropped && Some(c.label) == *l)
    };
    let (dropped, keep) = segments
        .into_iter()
        .partition(|s| dropped_label(&s.speaker_label));
    (keep, dropped, stats)
}

/// Outcome of scoring one segment.
pub type ScoreResult = Result<QualityScores, BackendError>;

/// Scores segments lacking an OVRL score, concurrently, and stores the
/// result on them. Returns the indices whose scoring failed.
pub fn score_missing<F>(segments: &mut [Segment], score: &F) -> Vec<(usize, BackendError)>
where
    F: Fn(&Segment) -> ScoreResult + Sync,
{
    let results: Vec<(usize, ScoreResult)> = segments
        .par_iter()
        .enumerate()
        .filter(|(_, s)| s.ovrl_score.is_none())
        .map(|(i, s)| (i, score(s)))
        .collect();
    let mut failed = Vec::new();
    for (i, r) in results {
        match r {
            Ok(q) => {
                segments[i].ovrl_score = Some(q.ovrl);
                segments[i].pdnsmos_score = q.pdnsmos;
            }
            Err(e) => failed.push((i, e)),
        }
    }
    failed
}

/// Returns (retained, dropped for low OVRL, dropped for scorer failure).
pub fn filter_by_quality<F>(segments: Vec<Segment>, score: &F, threshold: f64) -> (Vec<Segment>, Vec<Segment>, Vec<Segment>)
where
    F: Fn(&Segment) -> ScoreResult + Sync,
{
    let mut segments = segments;
    let failed: Vec<usize> = score_missing(&mut segments, score)
        .into_iter()
        .map(|(i, e)| {
            tracing::warn!(recording = %segments[i].recording_id, start_s = segments[i].range.start_s, error = %e, "quality scoring failed");
            i
        })
        .collect();
    let mut keep = Vec::new();
    let mut low = Vec::new();
    let mut errors = Vec::new();
    for (i, s) in segments.into_iter().enumerate() {
        if failed.contains(&i) {
            errors.push(s);
        } else if s.ovrl_score.is_some_and(|o| o >= threshold) {
            keep.push(s);
        } else {
            low.push(s);
        }
    }
    (keep, low, errors)
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub retained: Vec<Segment>,
    /// Segments dropped only for lacking a speaker label.
    pub unlabeled: Vec<Segment>,
    pub report: FilterReport,
}

/// Applies segment similarity, cluster reliability and quality, in that
/// order, repeated to a fixpoint. With `speaker_rules` off only the quality
/// rule runs.
pub fn run_filter_chain<F>(
    segments: Vec<Segment>,
    thresholds: &FilterThresholds,
    speaker_rules: bool,
    score: &F,
) -> FilterOutcome
where
    F: Fn(&Segment) -> ScoreResult + Sync,
{
    let mut report = FilterReport {
        input_count: segments.len(),
        ..Default::default()
    };
    let mut clusters: BTreeMap<SpeakerLabel, ClusterStats> = BTreeMap::new();
    let mut unlabeled_out = Vec::new();
    let mut current = segments;
    loop {
        report.passes += 1;
        let before = current.len();
        let mut survivors = current;
        if speaker_rules {
            let (keep, low, unlabeled) = filter_by_segment_similarity(survivors, thresholds.seg_sim);
            report.dropped_by_rule.segment_similarity += low.len();
            report.dropped_by_rule.unlabeled += unlabeled.len();
            unlabeled_out.extend(unlabeled);
            let (keep, dropped, stats) =
                filter_by_cluster_reliability(keep, thresholds.cluster_avg, thresholds.cluster_max);
            report.dropped_by_rule.cluster_reliability += dropped.len();
            for c in stats {
                clusters.insert(c.label, c);
            }
            survivors = keep;
        }
        let (keep, low, errors) = filter_by_quality(survivors, score, thresholds.ovrl);
        report.dropped_by_rule.quality_score += low.len();
        report.dropped_by_rule.scorer_error += errors.len();
        current = keep;
        if current.len() == before {
            break;
        }
    }
    report.retained_count = current.len();
    report.clusters = clusters.into_values().collect();
    FilterOutcome {
        retained: current,
        unlabeled: unlabeled_out,
        report,
    }
}
