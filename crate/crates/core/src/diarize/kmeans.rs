//! Lloyd's K-Means with k-means++ seeding and best-of-N restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RESTARTS: usize = 10;
pub const MAX_ITER: usize = 300;
/// Stop once no center moves farther than this.
pub const TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Renumbered by first occurrence, so label 0 belongs to point 0.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; the lowest index wins ties.
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > r {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave r just above the final sum.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let dim = points[0].len();
    let k = centers.len();
    let mut labels = vec![0; points.len()];
    for _ in 0..MAX_ITER {
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            *l = nearest(p, &centers).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut moved = 0.0f64;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // Empty cluster: reseed at the point worst served by its center.
                let far = points
                    .iter()
                    .zip(&labels)
                    .enumerate()
                    .map(|(i, (p, &l))| (i, sq_dist(p, &centers[l])))
                    .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best })
                    .0;
                points[far].clone()
            };
            moved = moved.max(sq_dist(&next, &centers[c]).sqrt());
            centers[c] = next;
        }
        if moved < TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (c, d) = nearest(p, &centers);
        *l = c;
        inertia += d;
    }
    (labels, centers, inertia)
}

/// Renumbers labels by first occurrence and drops unused centers.
pub fn canonical_labels(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut map: Vec<(usize, usize)> = Vec::new();
    let relabeled = labels
        .iter()
        .map(|&l| match map.iter().find(|(old, _)| *old == l) {
            Some(&(_, new)) => new,
            None => {
                map.push((l, map.len()));
                map.len() - 1
            }
        })
        .collect();
    (relabeled, map.into_iter().map(|(old, _)| old).collect())
}

/// `points` must be non-empty and share one dimension; `1 ≤ k ≤ n`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> KMeansResult {
    assert!(!points.is_empty() && (1..=points.len()).contains(&k));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for _ in 0..RESTARTS {
        let init = plus_plus(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (labels, centers, inertia) = best.expect("at least one restart");
    let (labels, order) = canonical_labels(&labels);
    KMeansResult {
        labels,
        centers: order.into_iter().map(|c| centers[c].clone()).collect(),
        inertia,
    }
}
