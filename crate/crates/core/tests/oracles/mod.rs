#![allow(dead_code)]

//! Reference implementations and generators used as test oracles. Each one
//! is written from the rules directly and shares no code with the crate.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-9;

// ---------------------------------------------------------------- segmenter

#[derive(Debug, Clone, Copy)]
pub struct SegRules {
    pub threshold: f64,
    pub silence_split_s: f64,
    pub pad_s: f64,
    pub min_s: f64,
    pub soft_max_s: f64,
    pub hard_max_s: f64,
}

impl Default for SegRules {
    fn default() -> Self {
        Self {
            threshold: 0.76,
            silence_split_s: 1.0,
            pad_s: 0.4,
            min_s: 1.5,
            soft_max_s: 30.0,
            hard_max_s: 40.0,
        }
    }
}

fn len(r: (f64, f64)) -> f64 {
    r.1 - r.0
}

/// Repeatedly fixes the first region shorter than `min_s`: join it with its
/// successor when the union stays within `cap`, else with its predecessor,
/// else delete it.
fn fix_short(mut v: Vec<(f64, f64)>, min_s: f64, cap: f64) -> Vec<(f64, f64)> {
    loop {
        let Some(i) = v.iter().position(|&r| len(r) < min_s - EPS) else {
            return v;
        };
        if i + 1 < v.len() && v[i + 1].1 - v[i].0 <= cap + EPS {
            v[i] = (v[i].0, v[i + 1].1);
            v.remove(i + 1);
        } else if i > 0 && v[i].1 - v[i - 1].0 <= cap + EPS {
            v[i - 1] = (v[i - 1].0, v[i].1);
            v.remove(i);
        } else {
            v.remove(i);
        }
    }
}

/// Brute-force segmentation of a probability track.
pub fn reference_segments(probs: &[f32], hop: f64, duration: f64, r: &SegRules) -> Vec<(f64, f64)> {
    let speech: Vec<bool> = probs.iter().map(|&p| p >= r.threshold as f32).collect();

    // Speech runs as frame index pairs, then bridge short silences.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (k, &s) in speech.iter().enumerate() {
        if !s {
            continue;
        }
        match runs.last_mut() {
            Some(last) if last.1 == k => last.1 = k + 1,
            _ => runs.push((k, k + 1)),
        }
    }
    let mut bridged: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match bridged.last_mut() {
            Some(last) if (run.0 - last.1) as f64 * hop <= r.silence_split_s + EPS => last.1 = run.1,
            _ => bridged.push(run),
        }
    }

    // Seconds, padded and clamped; then merge anything touching.
    let mut v: Vec<(f64, f64)> = bridged
        .iter()
        .map(|&(a, b)| (a as f64 * hop, (b as f64 * hop).min(duration)))
        .filter(|x| x.1 > x.0)
        .map(|(a, b)| ((a - r.pad_s).max(0.0), (b + r.pad_s).min(duration)))
        .filter(|x| x.1 > x.0)
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 1..v.len() {
            if v[i].0 <= v[i - 1].1 + EPS {
                v[i - 1].1 = v[i - 1].1.max(v[i].1);
                v.remove(i);
                changed = true;
                break;
            }
        }
    }

    let v = fix_short(v, r.min_s, f64::INFINITY);

    // Max length: cut at the first silent frame starting in
    // [start + soft, start + hard), else hard-cut at start + hard.
    let mut split = Vec::new();
    for (a, b) in v {
        let mut start = a;
        loop {
            if b - start <= r.soft_max_s + EPS {
                split.push((start, b));
                break;
            }
            let lo = start + r.soft_max_s;
            let hi = (start + r.hard_max_s).min(b);
            let silent = (0..speech.len()).find(|&k| {
                let t = k as f64 * hop;
                !speech[k] && t >= lo - EPS && t < hi - EPS
            });
            let cut = match silent {
                Some(k) => k as f64 * hop,
                None if b - start > r.hard_max_s + EPS => start + r.hard_max_s,
                None => {
                    split.push((start, b));
                    break;
                }
            };
            split.push((start, cut));
            start = cut;
        }
    }
    fix_short(split, r.min_s, r.hard_max_s)
}

/// Alternating speech/silence runs with lengths drawn to exercise every rule:
/// bridgeable and splitting silences, sub-minimum bursts and runs beyond the
/// soft and hard maxima. Probabilities sometimes sit exactly on the threshold.
pub fn random_track(rng: &mut ChaCha8Rng, threshold: f64) -> (Vec<f32>, f64) {
    let hop = rng.gen_range(10..=25) as f64 / 1000.0;
    let total_s = rng.gen_range(10.0..600.0);
    let frames = (total_s / hop) as usize;
    let thr = threshold as f32;
    let mut probs = Vec::with_capacity(frames);
    let mut speech = rng.gen_bool(0.5);
    while probs.len() < frames {
        let secs: f64 = if speech {
            match rng.gen_range(0..10) {
                0..=3 => rng.gen_range(0.02..1.5),
                4..=7 => rng.gen_range(1.5..20.0),
                8 => rng.gen_range(28.0..45.0),
                _ => rng.gen_range(45.0..120.0),
            }
        } else {
            match rng.gen_range(0..10) {
                0..=2 => rng.gen_range(0.01..0.3),
                3..=5 => rng.gen_range(0.8..1.2),
                6 => 1.0,
                _ => rng.gen_range(1.2..6.0),
            }
        };
        let n = ((secs / hop).round() as usize).max(1);
        for _ in 0..n {
            let p = if speech {
                if rng.gen_bool(0.1) { thr } else { rng.gen_range(thr..=1.0) }
            } else if rng.gen_bool(0.05) {
                f32::from_bits(thr.to_bits() - 1)
            } else {
                rng.gen_range(0.0..thr)
            };
            probs.push(p);
        }
        speech = !speech;
    }
    probs.truncate(frames.max(1));
    (probs, hop)
}

// ---------------------------------------------------------------- spectra

/// Eigenvalues of `I − D^-1/2 A D^-1/2`, ascending, via nalgebra.
pub fn laplacian_spectrum(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>()).collect();
    let l = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - a[i][j] / (d[i].sqrt() * d[j].sqrt())
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Smallest i in [1, min(k_max, n−1)] maximizing λ_i − λ_{i−1} (within tol).
pub fn eigengap_oracle(ev: &[f64], k_max: usize, tol: f64) -> usize {
    let upper = k_max.min(ev.len() - 1);
    let best = (1..=upper).map(|i| ev[i] - ev[i - 1]).fold(f64::MIN, f64::max);
    (1..=upper).find(|&i| ev[i] - ev[i - 1] >= best - tol).unwrap_or(1)
}

/// Block-diagonal affinity: ones inside blocks, `off` between them.
pub fn block_affinity(sizes: &[usize], off: f64) -> Vec<Vec<f64>> {
    let owner: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
    let n = owner.len();
    (0..n)
        .map(|i| (0..n).map(|j| if owner[i] == owner[j] { 1.0 } else { off }).collect())
        .collect()
}

// ---------------------------------------------------------------- clusters

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `k` orthonormal directions in `dim` dimensions.
pub fn orthonormal(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for u in &out {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        unit(&mut v);
        out.push(v);
    }
    out
}

/// Points scattered around `k` orthogonal directions, in shuffled order,
/// with the true label of each. Every direction gets at least one point.
pub fn cone_points(rng: &mut ChaCha8Rng, k: usize, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dirs = orthonormal(rng, k, dim);
    let sigma = (0.05 / dim as f64).sqrt();
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    let points = labels
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = dirs[c].iter().map(|&x| x + sigma * gaussian(rng)).collect();
            unit(&mut v);
            v
        })
        .collect();
    (points, labels)
}

pub fn to_f32(points: Vec<Vec<f64>>) -> Vec<Vec<f32>> {
    points.into_iter().map(|v| v.into_iter().map(|x| x as f32).collect()).collect()
}

/// [`cone_points`], regenerated until intra-cluster cosines all exceed
/// `intra` and inter-cluster ones stay below `inter`.
pub fn cones(rng: &mut ChaCha8Rng, k: usize, n: usize, dim: usize, intra: f64, inter: f64) -> (Vec<Vec<f32>>, Vec<usize>) {
    loop {
        let (points, labels) = cone_points(rng, k, n, dim);
        let ok = (0..n).all(|i| {
            (i + 1..n).all(|j| {
                let c = dot(&points[i], &points[j]);
                if labels[i] == labels[j] { c > intra } else { c < inter }
            })
        });
        if ok {
            return (to_f32(points), labels);
        }
    }
}

/// Adjusted Rand index from the contingency table.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

// ---------------------------------------------------------------- merging

/// Greedy merge over explicit member sets: join the most similar pair of
/// centers above `threshold`, recompute the joined center as the normalized
/// mean of its members, repeat. Returns the member sets in final order.
pub fn merge_oracle(points: &[Vec<f64>], groups: Vec<Vec<usize>>, threshold: f64) -> Vec<Vec<usize>> {
    let center = |members: &[usize]| {
        let mut c = vec![0.0; points[0].len()];
        for &m in members {
            c.iter_mut().zip(&points[m]).for_each(|(s, x)| *s += x);
        }
        c.iter_mut().for_each(|s| *s /= members.len() as f64);
        unit(&mut c);
        c
    };
    let cos = |a: &[f64], b: &[f64]| dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
    let mut groups = groups;
    let mut centers: Vec<Vec<f64>> = groups.iter().map(|g| center(g)).collect();
    loop {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let s = cos(&centers[i], &centers[j]);
                if s > best.2 {
                    best = (i, j, s);
                }
            }
        }
        if best.2 <= threshold {
            return groups;
        }
        let (i, j, _) = best;
        let moved = groups.remove(j);
        centers.remove(j);
        groups[i].extend(moved);
        groups[i].sort_unstable();
        centers[i] = center(&groups[i]);
    }
}
