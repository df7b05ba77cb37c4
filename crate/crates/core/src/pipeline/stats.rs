//! Corpus statistics in the shape of a results table: duration, speaker
//! count, and mean ± std of the quality scores.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::manifest::ManifestRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ScoreSummary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            count: values.len(),
            mean,
            std: var.sqrt(),
        }
    }
}

/// Segments and hours still alive after a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRetention {
    pub stage: String,
    pub segments: usize,
    pub duration_h: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_duration_h: f64,
    pub num_segments: usize,
    pub num_speakers: usize,
    pub ovrl: ScoreSummary,
    pub pdnsmos: ScoreSummary,
    #[serde(default)]
    pub retention: Vec<StageRetention>,
}

pub fn compute_stats(records: &[ManifestRecord]) -> CorpusStats {
    let seconds: f64 = records.iter().map(ManifestRecord::duration_s).sum();
    let speakers: BTreeSet<_> = records.iter().filter_map(|r| r.speaker_label).collect();
    let ovrl: Vec<f64> = records.iter().filter_map(|r| r.ovrl_score).collect();
    let pdnsmos: Vec<f64> = records.iter().filter_map(|r| r.pdnsmos_score).collect();
    CorpusStats {
        total_duration_h: seconds / 3600.0,
        num_segments: records.len(),
        num_speakers: speakers.len(),
        ovrl: ScoreSummary::of(&ovrl),
        pdnsmos: ScoreSummary::of(&pdnsmos),
        retention: Vec::new(),
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let score = |s: &ScoreSummary| {
            if s.count == 0 {
                "-".to_string()
            } else {
                format!("{:.2} ± {:.2}", s.mean, s.std)
            }
        };
        writeln!(f, "{:>10}  {:>6}  {:>8}  {:>13}  {:>13}", "Dur (h)", "nSpk", "nSeg", "DNSMOS", "PDNSMOS")?;
        writeln!(
            f,
            "{:>10.2}  {:>6}  {:>8}  {:>13}  {:>13}",
            self.total_duration_h,
            self.num_speakers,
            self.num_segments,
            score(&self.ovrl),
            score(&self.pdnsmos)
        )?;
        for r in &self.retention {
            writeln!(f, "  after {:<8} {:>8} segments {:>10.4} h", r.stage, r.segments, r.duration_h)?;
        }
        Ok(())
    }
}
