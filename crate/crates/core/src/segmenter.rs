//! Turns frame-level speech probabilities into segments.
//!
//! The rules, applied in order:
//! 1. frames with probability `>= vad_threshold` are speech;
//! 2. silences no longer than `silence_split_s` do not split speech;
//! 3. every region is padded by `pad_s` on both sides (clamped, overlaps merged);
//! 4. regions shorter than `min_segment_s` are merged forward across the gap
//!    until long enough, a short tail merges backward, a lone short region is dropped;
//! 5. regions longer than `soft_max_segment_s` are cut at the first silent frame
//!    past the soft limit, or at exactly `hard_max_segment_s` if none comes first;
//! 6. a last merge pass absorbs short remainders without exceeding the hard limit.

use thiserror::Error;

use crate::config::PipelineConfig;
use crate::types::{Segment, TimeRange, TIME_EPS};

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("frame hop must be positive, got {0}")]
    BadHop(f64),
    #[error("probability at frame {index} is {value}, outside [0, 1]")]
    BadProbability { index: usize, value: f32 },
}

/// Per-frame speech probabilities from a VAD backend.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack {
    probs: Vec<f32>,
    frame_hop_s: f64,
}

impl FrameTrack {
    pub fn new(probs: Vec<f32>, frame_hop_s: f64) -> Result<Self, TrackError> {
        if !(frame_hop_s.is_finite() && frame_hop_s > 0.0) {
            return Err(TrackError::BadHop(frame_hop_s));
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(TrackError::BadProbability { index, value });
        }
        Ok(Self { probs, frame_hop_s })
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.frame_hop_s
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.probs.len() as f64 * self.frame_hop_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechMask {
    flags: Vec<bool>,
    frame_hop_s: f64,
}

impl SpeechMask {
    pub fn new(flags: Vec<bool>, frame_hop_s: f64) -> Self {
        Self { flags, frame_hop_s }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.frame_hop_s
    }

    pub fn duration_s(&self) -> f64 {
        self.flags.len() as f64 * self.frame_hop_s
    }

    fn frame_start(&self, i: usize) -> f64 {
        i as f64 * self.frame_hop_s
    }
}

/// Speech iff `p >= threshold`.
/// Compared at the track's f32 precision so a probability equal to the
/// threshold as written in the config counts as speech.
pub fn binarize(track: &FrameTrack, threshold: f64) -> SpeechMask {
    let threshold = threshold as f32;
    SpeechMask {
        flags: track
            .probs
            .iter()
            .map(|&p| p >= threshold)
            .collect(),
        frame_hop_s: track.frame_hop_s,
    }
}

/// Maximal speech runs with silences of at most `silence_split_s` bridged.
pub fn raw_regions(mask: &SpeechMask, silence_split_s: f64) -> Vec<TimeRange> {
    let hop = mask.frame_hop_s;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    let flags = &mask.flags;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        match runs.last_mut() {
            Some(last) if (start - last.1) as f64 * hop <= silence_split_s + TIME_EPS => {
                last.1 = i;
            }
            _ => runs.push((start, i)),
        }
    }
    runs.into_iter()
        .map(|(a, b)| TimeRange::raw(mask.frame_start(a), mask.frame_start(b)))
        .collect()
}

/// Widens each region by `pad_s`, clamps to `[0, total_duration_s)` and merges
/// regions that touch or overlap afterwards.
pub fn pad_regions(regions: &[TimeRange], pad_s: f64, total_duration_s: f64) -> Vec<TimeRange> {
    let mut out: Vec<TimeRange> = Vec::with_capacity(regions.len());
    for r in regions {
        let start = (r.start_s - pad_s).max(0.0);
        let end = (r.end_s + pad_s).min(total_duration_s);
        if end <= start {
            continue;
        }
        match out.last_mut() {
            Some(last) if start <= last.end_s + TIME_EPS => last.end_s = last.end_s.max(end),
            _ => out.push(TimeRange::raw(start, end)),
        }
    }
    out
}

/// Merges regions shorter than `min_s` with their successor (gap included)
/// until the accumulated region reaches `min_s`. A short tail merges backward;
/// if nothing is left to merge with, the short region is dropped.
pub fn enforce_min_length(regions: &[TimeRange], min_s: f64) -> Vec<TimeRange> {
    merge_short(regions, min_s, None)
}

fn merge_short(regions: &[TimeRange], min_s: f64, cap_s: Option<f64>) -> Vec<TimeRange> {
    let fits = |r: &TimeRange| cap_s.is_none_or(|cap| r.duration_s() <= cap + TIME_EPS);
    let long_enough = |r: &TimeRange| r.duration_s() >= min_s - TIME_EPS;
    let mut out: Vec<TimeRange> = Vec::with_capacity(regions.len());
    let mut pending: Option<TimeRange> = None;

    // A short region that cannot grow forward tries its predecessor, else goes.
    let settle_backward = |out: &mut Vec<TimeRange>, short: TimeRange| {
        if let Some(last) = out.last_mut() {
            let merged = TimeRange::raw(last.start_s, short.end_s);
            if fits(&merged) {
                *last = merged;
            }
        }
    };

    for &r in regions {
        let mut candidate = match pending {
            None => r,
            Some(p) => TimeRange::raw(p.start_s, r.end_s),
        };
        if let Some(p) = pending {
            if !fits(&candidate) {
                settle_backward(&mut out, p);
                candidate = r;
            }
        }
        if long_enough(&candidate) {
            out.push(candidate);
            pending = None;
        } else {
            pending = Some(candidate);
        }
    }
    if let Some(p) = pending {
        settle_backward(&mut out, p);
    }
    out
}

/// Splits regions longer than `soft_max_s` at the first silent frame starting at
/// or after `start + soft_max_s`; without one before `start + hard_max_s` the
/// region is cut at exactly `start + hard_max_s`. Remainders are processed the
/// same way.
pub fn enforce_max_length(
    regions: &[TimeRange],
    mask: &SpeechMask,
    soft_max_s: f64,
    hard_max_s: f64,
) -> Vec<TimeRange> {
    let hop = mask.frame_hop_s;
    let mut out = Vec::with_capacity(regions.len());
    for r in regions {
        let mut start = r.start_s;
        while r.end_s - start > soft_max_s + TIME_EPS {
            let soft_at = start + soft_max_s;
            let limit = (start + hard_max_s).min(r.end_s);
            let mut i = ((soft_at / hop) - 1e-9).ceil().max(0.0) as usize;
            while i > 0 && mask.frame_start(i - 1) >= soft_at - TIME_EPS {
                i -= 1;
            }
            while mask.frame_start(i) < soft_at - TIME_EPS {
                i += 1;
            }
            let mut cut = None;
            while i < mask.flags.len() && mask.frame_start(i) < limit - TIME_EPS {
                if !mask.flags[i] {
                    cut = Some(mask.frame_start(i));
                    break;
                }
                i += 1;
            }
            let cut = match cut {
                Some(t) => t,
                None if r.end_s - start > hard_max_s + TIME_EPS => start + hard_max_s,
                None => break,
            };
            out.push(TimeRange::raw(start, cut));
            start = cut;
        }
        out.push(TimeRange::raw(start, r.end_s));
    }
    out
}

/// Full rule chain over a track whose recording lasts `total_duration_s`.
pub fn segment_ranges_within(
    track: &FrameTrack,
    config: &PipelineConfig,
    total_duration_s: f64,
) -> Vec<TimeRange> {
    let mask = binarize(track, config.vad_threshold);
    let raw: Vec<TimeRange> = raw_regions(&mask, config.silence_split_s)
        .into_iter()
        .filter_map(|r| {
            let end = r.end_s.min(total_duration_s);
            (end > r.start_s).then(|| TimeRange::raw(r.start_s, end))
        })
        .collect();
    let padded = pad_regions(&raw, config.pad_s, total_duration_s);
    let merged = enforce_min_length(&padded, config.min_segment_s);
    let split = enforce_max_length(
        &merged,
        &mask,
        config.soft_max_segment_s,
        config.hard_max_segment_s,
    );
    merge_short(
        &split,
        config.min_segment_s,
        Some(config.hard_max_segment_s),
    )
}

pub fn segment_ranges(track: &FrameTrack, config: &PipelineConfig) -> Vec<TimeRange> {
    segment_ranges_within(track, config, track.duration_s())
}

pub fn segment_recording(
    recording_id: &str,
    track: &FrameTrack,
    config: &PipelineConfig,
) -> Vec<Segment> {
    segment_ranges(track, config)
        .into_iter()
        .map(|r| Segment::new(recording_id, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(a: f64, b: f64) -> TimeRange {
        TimeRange::raw(a, b)
    }

    fn assert_ranges(got: &[TimeRange], want: &[(f64, f64)]) {
        assert_eq!(got.len(), want.len(), "got {got:?}, want {want:?}");
        for (g, w) in got.iter().zip(want) {
            assert!(g.approx_eq(&tr(w.0, w.1), 1e-9), "got {got:?}, want {want:?}");
        }
    }

    /// Mask with `hop` frames, speech wherever `speech` covers the frame start.
    fn mask_from(total_s: f64, hop: f64, speech: &[(f64, f64)]) -> SpeechMask {
        let n = (total_s / hop).round() as usize;
        let flags = (0..n)
            .map(|i| {
                let t = i as f64 * hop + hop / 2.0;
                speech.iter().any(|&(a, b)| t >= a && t < b)
            })
            .collect();
        SpeechMask::new(flags, hop)
    }

    #[test]
    fn binarize_is_inclusive() {
        let t = FrameTrack::new(vec![0.8, 0.76, 0.5], 0.01).unwrap();
        assert_eq!(binarize(&t, 0.76).flags(), &[true, true, false]);
        let zeros = FrameTrack::new(vec![0.0; 5], 0.01).unwrap();
        assert!(binarize(&zeros, 0.76).flags().iter().all(|f| !f));
        let ones = FrameTrack::new(vec![1.0; 5], 0.01).unwrap();
        assert!(binarize(&ones, 0.76).flags().iter().all(|&f| f));
    }

    #[test]
    fn track_validation() {
        assert_eq!(
            FrameTrack::new(vec![0.5, 1.2], 0.01),
            Err(TrackError::BadProbability {
                index: 1,
                value: 1.2
            })
        );
        assert!(FrameTrack::new(vec![], 0.0).is_err());
    }

    #[test]
    fn short_silence_bridged() {
        let m = mask_from(4.0, 0.1, &[(0.0, 2.0), (2.5, 4.0)]);
        assert_eq!(m.flags().len(), 40);
        assert_ranges(&raw_regions(&m, 1.0), &[(0.0, 4.0)]);
    }

    #[test]
    fn long_silence_splits() {
        let m = mask_from(5.0, 0.1, &[(0.0, 2.0), (3.5, 5.0)]);
        assert_ranges(&raw_regions(&m, 1.0), &[(0.0, 2.0), (3.5, 5.0)]);
    }

    #[test]
    fn exactly_split_length_bridged() {
        let m = mask_from(5.0, 0.1, &[(0.0, 2.0), (3.0, 5.0)]);
        assert_ranges(&raw_regions(&m, 1.0), &[(0.0, 5.0)]);
    }

    #[test]
    fn all_silence_has_no_regions() {
        let m = mask_from(5.0, 0.1, &[]);
        assert!(raw_regions(&m, 1.0).is_empty());
    }

    #[test]
    fn padding() {
        assert_ranges(&pad_regions(&[tr(1.0, 2.0)], 0.4, 10.0), &[(0.6, 2.4)]);
        assert_ranges(&pad_regions(&[tr(0.2, 1.0)], 0.4, 10.0), &[(0.0, 1.4)]);
        assert_ranges(
            &pad_regions(&[tr(1.0, 2.0), tr(2.5, 3.0)], 0.4, 10.0),
            &[(0.6, 3.4)],
        );
        assert_ranges(&pad_regions(&[tr(9.0, 9.9)], 0.4, 10.0), &[(8.6, 10.0)]);
    }

    #[test]
    fn min_length_merges_forward() {
        assert_ranges(
            &enforce_min_length(&[tr(0.0, 1.0), tr(2.0, 4.0)], 1.5),
            &[(0.0, 4.0)],
        );
        assert_ranges(
            &enforce_min_length(&[tr(0.0, 2.0), tr(3.0, 5.0)], 1.5),
            &[(0.0, 2.0), (3.0, 5.0)],
        );
        assert!(enforce_min_length(&[tr(0.0, 0.5)], 1.5).is_empty());
    }

    #[test]
    fn min_length_accumulates_and_tail_merges_back() {
        assert_ranges(
            &enforce_min_length(&[tr(0.0, 0.3), tr(0.5, 0.8), tr(1.0, 1.6), tr(5.0, 5.5)], 1.5),
            &[(0.0, 5.5)],
        );
        assert_ranges(
            &enforce_min_length(&[tr(0.0, 3.0), tr(5.0, 5.5)], 1.5),
            &[(0.0, 5.5)],
        );
        assert!(enforce_min_length(&[tr(0.0, 0.5), tr(0.7, 1.0)], 1.5).is_empty());
    }

    #[test]
    fn capped_merge_drops_what_cannot_fit() {
        let out = merge_short(&[tr(0.0, 40.0), tr(40.0, 41.0)], 1.5, Some(40.0));
        assert_ranges(&out, &[(0.0, 40.0)]);
        let out = merge_short(&[tr(0.0, 1.0), tr(2.0, 41.0)], 1.5, Some(40.0));
        assert_ranges(&out, &[(2.0, 41.0)]);
    }

    #[test]
    fn max_length_rules() {
        let m = mask_from(50.0, 0.01, &[(0.0, 50.0)]);
        assert_ranges(&enforce_max_length(&[tr(0.0, 25.0)], &m, 30.0, 40.0), &[(0.0, 25.0)]);
        assert_ranges(
            &enforce_max_length(&[tr(0.0, 45.0)], &m, 30.0, 40.0),
            &[(0.0, 40.0), (40.0, 45.0)],
        );
        let m = mask_from(50.0, 0.01, &[(0.0, 32.0), (32.5, 50.0)]);
        assert_ranges(
            &enforce_max_length(&[tr(0.0, 35.0)], &m, 30.0, 40.0),
            &[(0.0, 32.0), (32.0, 35.0)],
        );
    }

    #[test]
    fn silence_before_soft_limit_is_ignored() {
        let m = mask_from(50.0, 0.01, &[(0.0, 10.0), (10.5, 50.0)]);
        assert_ranges(
            &enforce_max_length(&[tr(0.0, 35.0)], &m, 30.0, 40.0),
            &[(0.0, 35.0)],
        );
    }

    #[test]
    fn long_region_split_repeatedly() {
        let m = mask_from(100.0, 0.02, &[(0.0, 100.0)]);
        assert_ranges(
            &enforce_max_length(&[tr(0.0, 100.0)], &m, 30.0, 40.0),
            &[(0.0, 40.0), (40.0, 80.0), (80.0, 100.0)],
        );
    }

    fn track_from(total_s: f64, hop: f64, speech: &[(f64, f64)]) -> FrameTrack {
        let m = mask_from(total_s, hop, speech);
        FrameTrack::new(
            m.flags().iter().map(|&f| if f { 0.9 } else { 0.1 }).collect(),
            hop,
        )
        .unwrap()
    }

    #[test]
    fn recording_examples() {
        let cfg = PipelineConfig::default();
        assert!(segment_recording("r", &track_from(20.0, 0.01, &[]), &cfg).is_empty());
        let segs = segment_recording("r", &track_from(20.0, 0.01, &[(5.0, 15.0)]), &cfg);
        assert_eq!(segs.len(), 1);
        assert!((segs[0].duration_s() - 10.8).abs() < 1e-9);
        assert!(segs[0].range.approx_eq(&tr(4.6, 15.4), 1e-9));
    }

    #[test]
    fn whole_speech_under_min_yields_nothing() {
        let cfg = PipelineConfig::default();
        let segs = segment_recording("r", &track_from(20.0, 0.01, &[(5.0, 5.5)]), &cfg);
        assert!(segs.is_empty());
    }

    #[test]
    fn truncation_remainder_merges_back_under_hard_limit() {
        let cfg = PipelineConfig::default();
        let segs = segment_ranges(&track_from(60.0, 0.01, &[(1.0, 41.2)]), &cfg);
        for s in &segs {
            assert!(s.duration_s() >= 1.5 - 1e-9 && s.duration_s() <= 40.0 + 1e-9, "{segs:?}");
        }
    }
}
