//! Cluster centers in embedding space and threshold merging.

use super::DiarizeError;
use crate::types::{cosine, normalize, SpeakerEmbedding};

/// Unit-normalized mean of `members`. When the mean vanishes, the member
/// closest to the raw mean stands in.
pub fn center_of(members: &[&SpeakerEmbedding]) -> Option<Vec<f64>> {
    let first = members.first()?;
    let mut mean = vec![0.0; first.dim()];
    for m in members {
        for (s, &x) in mean.iter_mut().zip(m.vector()) {
            *s += f64::from(x);
        }
    }
    let inv = 1.0 / members.len() as f64;
    mean.iter_mut().for_each(|s| *s *= inv);
    let mut center = mean.clone();
    if normalize(&mut center) > 1e-12 {
        return Some(center);
    }
    let closest = members
        .iter()
        .map(|m| {
            let v = m.to_f64();
            let d: f64 = v.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            (v, d)
        })
        .fold(None::<(Vec<f64>, f64)>, |best, x| match best {
            Some(b) if b.1 <= x.1 => Some(b),
            _ => Some(x),
        })
        .expect("members is non-empty")
        .0;
    Some(closest)
}

pub fn compute_centers(
    embeddings: &[SpeakerEmbedding],
    assignments: &[usize],
) -> Result<Vec<Vec<f64>>, DiarizeError> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<&SpeakerEmbedding>> = vec![Vec::new(); k];
    for (e, &a) in embeddings.iter().zip(assignments) {
        members[a].push(e);
    }
    members
        .iter()
        .enumerate()
        .map(|(c, m)| center_of(m).ok_or(DiarizeError::EmptyCluster(c)))
        .collect()
}

/// Greedily merges the most similar pair of centers while its cosine
/// similarity exceeds `threshold`. Merged centers are recomputed from all
/// their members; surviving clusters keep their relative order.
pub fn merge_clusters(
    embeddings: &[SpeakerEmbedding],
    centers: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    threshold: f64,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), DiarizeError> {
    let mut centers = centers;
    let mut assignments = assignments;
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                let s = cosine(&centers[a], &centers[b]);
                if s > threshold && best.is_none_or(|(_, _, t)| s > t) {
                    best = Some((a, b, s));
                }
            }
        }
        let Some((a, b, _)) = best else {
            return Ok((centers, assignments));
        };
        for l in assignments.iter_mut() {
            if *l == b {
                *l = a;
            } else if *l > b {
                *l -= 1;
            }
        }
        centers.remove(b);
        let members: Vec<&SpeakerEmbedding> = embeddings
            .iter()
            .zip(&assignments)
            .filter(|(_, &l)| l == a)
            .map(|(e, _)| e)
            .collect();
        centers[a] = center_of(&members).ok_or(DiarizeError::EmptyCluster(a))?;
    }
}
