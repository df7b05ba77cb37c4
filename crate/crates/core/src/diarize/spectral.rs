//! Affinity graph, normalized Laplacian and eigengap model selection.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::diag::Diag;
use faer::{Mat, MatRef, Par};

use super::kmeans::kmeans;
use super::DiarizeError;
use crate::types::SpeakerEmbedding;

/// Gaps within this distance of the largest count as ties.
pub const EIGENGAP_TIE_TOL: f64 = 1e-9;

/// Symmetric cosine affinity with negatives clamped to zero and a unit diagonal.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    values: Mat<f64>,
}

impl AffinityMatrix {
    /// Builds from explicit rows; for tests and hand-made graphs.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DiarizeError> {
        let n = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(DiarizeError::DimensionMismatch {
                index: i,
                expected: n,
                got: r.len(),
            });
        }
        Ok(Self {
            values: Mat::from_fn(n, n, |i, j| rows[i][j]),
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

pub(crate) fn embedding_matrix(embeddings: &[SpeakerEmbedding]) -> Result<Mat<f64>, DiarizeError> {
    let d = embeddings.first().map_or(0, |e| e.dim());
    if let Some((i, e)) = embeddings.iter().enumerate().find(|(_, e)| e.dim() != d) {
        return Err(DiarizeError::DimensionMismatch {
            index: i,
            expected: d,
            got: e.dim(),
        });
    }
    Ok(Mat::from_fn(embeddings.len(), d, |i, j| {
        f64::from(embeddings[i].vector()[j])
    }))
}

pub fn build_affinity(embeddings: &[SpeakerEmbedding]) -> Result<AffinityMatrix, DiarizeError> {
    if embeddings.is_empty() {
        return Err(DiarizeError::Empty);
    }
    let e = embedding_matrix(embeddings)?;
    let n = e.nrows();
    let mut gram = Mat::<f64>::zeros(n, n);
    faer::linalg::matmul::matmul(
        gram.as_mut(),
        faer::Accum::Replace,
        e.as_ref(),
        e.transpose(),
        1.0,
        Par::Seq,
    );
    // Embeddings are unit-norm, so the Gram matrix holds cosines. Mirror the
    // lower triangle so symmetry is exact.
    for j in 0..n {
        gram[(j, j)] = 1.0;
        for i in j + 1..n {
            let v = gram[(i, j)].clamp(0.0, 1.0);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(AffinityMatrix { values: gram })
}

/// `L = I − D^(−1/2) A D^(−1/2)`, consuming the affinity's storage.
pub fn normalized_laplacian(affinity: AffinityMatrix) -> Result<Mat<f64>, DiarizeError> {
    let mut m = affinity.values;
    let n = m.nrows();
    let mut dinv = vec![0.0; n];
    for (i, d) in dinv.iter_mut().enumerate() {
        let sum: f64 = (0..n).map(|j| m[(i, j)]).sum();
        if sum <= 0.0 {
            return Err(DiarizeError::ZeroRowSum(i));
        }
        *d = 1.0 / sum.sqrt();
    }
    for j in 0..n {
        for i in j..n {
            let v = -dinv[i] * m[(i, j)] * dinv[j] + if i == j { 1.0 } else { 0.0 };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Eigenvalues in nondecreasing order, and optionally the matching
/// eigenvectors as columns. Runs sequentially so results are reproducible.
pub(crate) fn eigh(m: MatRef<'_, f64>, vectors: bool) -> Result<(Vec<f64>, Option<Mat<f64>>), DiarizeError> {
    let n = m.nrows();
    let par = Par::Seq;
    let mut s = Diag::<f64>::zeros(n);
    let mut u = vectors.then(|| Mat::<f64>::zeros(n, n));
    let compute = if vectors {
        ComputeEigenvectors::Yes
    } else {
        ComputeEigenvectors::No
    };
    let mut buf = MemBuffer::new(evd::self_adjoint_evd_scratch::<f64>(
        n,
        compute,
        par,
        Default::default(),
    ));
    evd::self_adjoint_evd(
        m,
        s.as_mut(),
        u.as_mut().map(|u| u.as_mut()),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|e| DiarizeError::Eigen(format!("{e:?}")))?;
    let values: Vec<f64> = s.column_vector().iter().copied().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return Ok((values, u));
    }
    let sorted = order.iter().map(|&o| values[o]).collect();
    let u = u.map(|u| Mat::from_fn(n, n, |i, j| u[(i, order[j])]));
    Ok((sorted, u))
}

pub fn laplacian_eigenvalues(affinity: &AffinityMatrix) -> Result<Vec<f64>, DiarizeError> {
    let l = normalized_laplacian(affinity.clone())?;
    Ok(eigh(l.as_ref(), false)?.0)
}

/// `argmax_{i ∈ [1, min(k_max, n−1)]} (λ_{i+1} − λ_i)` over ascending
/// eigenvalues, smallest `i` among ties.
pub fn eigengap_k(eigenvalues: &[f64], k_max: usize) -> usize {
    let n = eigenvalues.len();
    let upper = k_max.min(n.saturating_sub(1));
    if upper == 0 {
        return 1;
    }
    let gaps: Vec<f64> = (1..=upper)
        .map(|i| eigenvalues[i] - eigenvalues[i - 1])
        .collect();
    let best = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    gaps.iter()
        .position(|&g| g >= best - EIGENGAP_TIE_TOL)
        .map_or(1, |p| p + 1)
}

pub fn estimate_k(affinity: &AffinityMatrix, k_max: usize) -> Result<usize, DiarizeError> {
    if affinity.n() < 2 {
        return Err(DiarizeError::TooFewChunks(affinity.n()));
    }
    Ok(eigengap_k(&laplacian_eigenvalues(affinity)?, k_max))
}

/// Rows of the first `k` eigenvector columns, each L2-normalized.
pub(crate) fn spectral_rows(vectors: MatRef<'_, f64>, k: usize) -> Vec<Vec<f64>> {
    (0..vectors.nrows())
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| vectors[(i, j)]).collect();
            crate::types::normalize(&mut row);
            row
        })
        .collect()
}

pub fn spectral_assign(affinity: &AffinityMatrix, k: usize, seed: u64) -> Result<Vec<usize>, DiarizeError> {
    let n = affinity.n();
    if k == 0 || k > n {
        return Err(DiarizeError::BadK { k, n });
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let l = normalized_laplacian(affinity.clone())?;
    let (_, u) = eigh(l.as_ref(), true)?;
    let rows = spectral_rows(u.expect("eigenvectors requested").as_ref(), k);
    Ok(kmeans(&rows, k, seed).labels)
}

/// Eigengap selection and spectral assignment from a single decomposition.
pub(crate) fn estimate_and_assign(
    affinity: AffinityMatrix,
    k_max: usize,
    seed: u64,
) -> Result<(usize, Vec<usize>), DiarizeError> {
    let n = affinity.n();
    if n < 2 {
        return Ok((1, vec![0; n]));
    }
    let l = normalized_laplacian(affinity)?;
    let (values, u) = eigh(l.as_ref(), true)?;
    drop(l);
    let k = eigengap_k(&values, k_max);
    if k == 1 {
        return Ok((1, vec![0; n]));
    }
    let rows = spectral_rows(u.expect("eigenvectors requested").as_ref(), k);
    Ok((k, kmeans(&rows, k, seed).labels))
}
