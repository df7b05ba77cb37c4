//! Grouping segments into clustering batches under the duration cap.
//!
//! A batch's duration is the summed duration of its segments. Batches stay
//! strictly below the cap. Recordings are kept whole unless one alone reaches
//! the cap, in which case it is split into `floor(dur / cap) + 1` parts at the
//! segment boundaries nearest the even split points.

use crate::config::BatchingPolicy;
use crate::types::Segment;

/// Index ranges into the input segment list, one per batch, in order.
pub type Batch = std::ops::Range<usize>;

fn total(segments: &[Segment]) -> f64 {
    segments.iter().map(Segment::duration_s).sum()
}

/// Runs of consecutive segments sharing a recording id.
fn recording_runs(segments: &[Segment]) -> Vec<Batch> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=segments.len() {
        if i == segments.len() || segments[i].recording_id != segments[start].recording_id {
            if i > start {
                runs.push(start..i);
            }
            start = i;
        }
    }
    runs
}

/// Greedy packing of `segments[run]` into pieces strictly below `cap_s`.
fn greedy_pieces(segments: &[Segment], run: Batch, cap_s: f64) -> Vec<Batch> {
    let mut out = Vec::new();
    let mut start = run.start;
    let mut acc = 0.0;
    for i in run.clone() {
        let d = segments[i].duration_s();
        if i > start && acc + d >= cap_s {
            out.push(start..i);
            start = i;
            acc = 0.0;
        }
        acc += d;
    }
    if run.end > start {
        out.push(start..run.end);
    }
    out
}

/// Splits one oversize recording into `floor(dur/cap)+1` near-equal parts.
fn split_recording(segments: &[Segment], run: Batch, cap_s: f64) -> Vec<Batch> {
    let durs: Vec<f64> = segments[run.clone()].iter().map(Segment::duration_s).collect();
    let dur: f64 = durs.iter().sum();
    let parts = (dur / cap_s).floor() as usize + 1;
    // cum[j] = duration before boundary j (boundary j precedes segment j).
    let mut cum = vec![0.0; durs.len() + 1];
    for (j, d) in durs.iter().enumerate() {
        cum[j + 1] = cum[j] + d;
    }
    let mut cuts = vec![0usize];
    for i in 1..parts {
        let target = i as f64 * dur / parts as f64;
        let lo = cuts.last().unwrap() + 1;
        let hi = durs.len() - (parts - i);
        if lo > hi {
            break;
        }
        let best = (lo..=hi)
            .min_by(|&a, &b| (cum[a] - target).abs().total_cmp(&(cum[b] - target).abs()))
            .unwrap();
        cuts.push(best);
    }
    cuts.push(durs.len());
    let pieces: Vec<Batch> = cuts
        .windows(2)
        .map(|w| run.start + w[0]..run.start + w[1])
        .collect();
    if pieces.len() == parts && pieces.iter().all(|p| total(&segments[p.clone()]) < cap_s) {
        pieces
    } else {
        greedy_pieces(segments, run, cap_s)
    }
}

/// `segments` must be sorted by (recording, start).
pub fn batch_segments(segments: &[Segment], max_hours: f64, policy: BatchingPolicy) -> Vec<Batch> {
    let cap_s = max_hours * 3600.0;
    let mut out = Vec::new();
    let mut current: Option<(Batch, f64)> = None;
    for run in recording_runs(segments) {
        let dur = total(&segments[run.clone()]);
        if dur >= cap_s {
            out.extend(current.take().map(|c| c.0));
            out.extend(split_recording(segments, run, cap_s));
            continue;
        }
        match (&mut current, policy) {
            (Some((batch, acc)), BatchingPolicy::Pooled) if *acc + dur < cap_s => {
                batch.end = run.end;
                *acc += dur;
            }
            _ => {
                out.extend(current.take().map(|c| c.0));
                current = Some((run, dur));
            }
        }
    }
    out.extend(current.map(|c| c.0));
    out
}
