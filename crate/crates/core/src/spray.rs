//! Spectral Relevance Analysis: cluster the sampled relevance maps of one
//! input to expose the distinct prediction strategies of the posterior.
//!
//! Pipeline: MinMax-normalize and average-pool each map, build a kNN
//! indicator affinity, form the unnormalized Laplacian `L = D - M`, pick the
//! cluster count at the eigengap, and label samples by k-means on the rows of
//! the first k eigenvectors.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::tensor::Tensor;
use crate::uai::{minmax_normalize_values, RelevanceSet};

/// Symmetrized kNN indicator matrix: entries in `{0,1}`, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    data: Vec<u8>,
    k_nn: usize,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_nn(&self) -> usize {
        self.k_nn
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.n + j]
    }

    /// Row degree `d_i = sum_j m_ij`.
    pub fn degree(&self, i: usize) -> usize {
        self.data[i * self.n..(i + 1) * self.n]
            .iter()
            .map(|&v| v as usize)
            .sum()
    }
}

/// Eigendecomposition of the unnormalized Laplacian.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Row-major `n x n` Laplacian `L = D - M`.
    pub laplacian: Vec<f64>,
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[j]` is the eigenvector for `eigenvalues[j]`, sign-fixed
    /// so its largest-magnitude component is positive.
    pub eigenvectors: Vec<Vec<f64>>,
}

/// Output of the full clustering pipeline.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub eigenvalues: Vec<f64>,
    pub selected_k: usize,
    /// Cluster label per sample; ids are canonicalized by descending cluster
    /// size, then lowest member index.
    pub labels: Vec<usize>,
    /// Per-cluster mean of the original (un-pooled) relevance maps.
    pub cluster_means: Vec<Tensor>,
    /// Cluster size divided by N; aligned with `cluster_means`.
    pub strengths: Vec<f64>,
    /// Coordinates of eigenvectors 2 and 3 per sample (zeros when absent).
    pub embedding: Vec<[f64; 2]>,
}

/// MinMax-normalizes each map, average-pools it with `kernel = stride =
/// pool`, and flattens. Spatial dims that do not divide `pool` are padded by
/// replicating the edge row/column.
pub fn preprocess(set: &RelevanceSet, pool: usize) -> Result<Vec<Vec<f64>>> {
    if pool == 0 {
        return Err(Error::InvalidArgument("pool must be positive".to_string()));
    }
    set.samples
        .iter()
        .map(|map| {
            let normed = minmax_normalize_values(map);
            Ok(match normed.rank() {
                1 => pool_1d(normed.data(), pool),
                2 => pool_2d(normed.data(), normed.shape()[0], normed.shape()[1], pool),
                r => {
                    return Err(Error::InvalidArgument(format!(
                        "cannot pool rank-{r} relevance maps"
                    )))
                }
            })
        })
        .collect()
}

fn pool_1d(data: &[f32], pool: usize) -> Vec<f64> {
    let n = data.len();
    let padded = n.div_ceil(pool) * pool;
    let at = |i: usize| f64::from(data[i.min(n - 1)]);
    (0..padded / pool)
        .map(|b| (0..pool).map(|j| at(b * pool + j)).sum::<f64>() / pool as f64)
        .collect()
}

fn pool_2d(data: &[f32], h: usize, w: usize, pool: usize) -> Vec<f64> {
    let ph = h.div_ceil(pool) * pool;
    let pw = w.div_ceil(pool) * pool;
    let at = |y: usize, x: usize| f64::from(data[y.min(h - 1) * w + x.min(w - 1)]);
    let mut out = Vec::with_capacity((ph / pool) * (pw / pool));
    for by in 0..ph / pool {
        for bx in 0..pw / pool {
            let mut acc = 0.0;
            for ky in 0..pool {
                for kx in 0..pool {
                    acc += at(by * pool + ky, bx * pool + kx);
                }
            }
            out.push(acc / (pool * pool) as f64);
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Directed kNN indicator under Euclidean distance (self excluded, distance
/// ties broken by lower sample index), symmetrized by entrywise max.
pub fn knn_affinity(vectors: &[Vec<f64>], k_nn: usize) -> Result<AffinityMatrix> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "kNN affinity needs at least 2 samples".to_string(),
        ));
    }
    if k_nn == 0 || k_nn >= n {
        return Err(Error::InvalidArgument(format!(
            "k_nn {k_nn} outside [1, {}]",
            n - 1
        )));
    }
    let mut data = vec![0u8; n * n];
    for i in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(&vectors[i], &vectors[j]), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(k_nn) {
            data[i * n + j] = 1;
        }
    }
    // m_ij = max(m_ij, m_ji)
    for i in 0..n {
        for j in (i + 1)..n {
            let m = data[i * n + j].max(data[j * n + i]);
            data[i * n + j] = m;
            data[j * n + i] = m;
        }
    }
    Ok(AffinityMatrix { n, data, k_nn })
}

/// Eigenpairs of `L = D - M`, sorted ascending.
pub fn laplacian_spectrum(m: &AffinityMatrix) -> Result<Spectrum> {
    let n = m.n;
    let mut lap = vec![0.0f64; n * n];
    for i in 0..n {
        let d = m.degree(i) as f64;
        for j in 0..n {
            lap[i * n + j] = if i == j {
                d - f64::from(m.get(i, j))
            } else {
                -f64::from(m.get(i, j))
            };
        }
    }
    let mat = DMatrix::from_row_slice(n, n, &lap);
    let eig = SymmetricEigen::try_new(mat, 1e-12, 0).ok_or(Error::EigenFailure)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let col = eig.eigenvectors.column(i);
            let mut v: Vec<f64> = col.iter().copied().collect();
            // Fix the sign: largest-magnitude component positive.
            let mut lead = 0;
            for (j, x) in v.iter().enumerate() {
                if x.abs() > v[lead].abs() {
                    lead = j;
                }
            }
            if v[lead] < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
            v
        })
        .collect();
    if let Some(&first) = eigenvalues.first() {
        if first < -1e-8 {
            return Err(Error::EigenFailure);
        }
    }
    Ok(Spectrum {
        laplacian: lap,
        eigenvalues,
        eigenvectors,
    })
}

/// Cluster count at the largest eigengap: `argmax_{i in [1, max_k]}
/// (lambda_{i+1} - lambda_i)` (1-based, ties toward smaller i). A multiple
/// zero eigenvalue of multiplicity m forces `k >= m`.
pub fn eigengap_select(eigenvalues: &[f64], max_k: usize) -> usize {
    let n = eigenvalues.len();
    if n < 2 || max_k < 1 {
        return 1;
    }
    let limit = max_k.min(n - 1);
    let mut best_k = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for i in 1..=limit {
        let gap = eigenvalues[i] - eigenvalues[i - 1];
        if gap > best_gap {
            best_gap = gap;
            best_k = i;
        }
    }
    let zeros = eigenvalues.iter().filter(|&&v| v.abs() <= 1e-8).count();
    if zeros > 1 {
        best_k = best_k.max(zeros.min(n));
    }
    best_k
}

/// Seeded k-means with greedy farthest-point seeding; returns `(labels,
/// within-cluster sum of squares)`.
fn kmeans_once(rows: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let n = rows.len();
    let dim = rows[0].len();
    let mut rng = seeded_rng(seed);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.random_range(0..n)].clone());
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let mut far = 0;
        for i in 1..n {
            if nearest[i] > nearest[far] {
                far = i;
            }
        }
        centers.push(rows[far].clone());
        for (dist, row) in nearest.iter_mut().zip(rows) {
            let d = sq_dist(row, centers.last().expect("center"));
            if d < *dist {
                *dist = d;
            }
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, row) in rows.iter().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(row, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(row, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }

        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (row, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(row) {
                *s += v;
            }
        }
        // Re-seed any empty cluster with the point farthest from its center.
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = 0;
                let mut far_d = -1.0;
                for (i, row) in rows.iter().enumerate() {
                    let d = sq_dist(row, &centers[labels[i]]);
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                let old = labels[far];
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(&rows[far]) {
                    *s -= v;
                }
                labels[far] = c;
                counts[c] = 1;
                sums[c].copy_from_slice(&rows[far]);
                changed = true;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (center_v, sum_v) in centers[c].iter_mut().zip(&sums[c]) {
                    *center_v = sum_v / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = rows
        .iter()
        .zip(&labels)
        .map(|(row, &l)| sq_dist(row, &centers[l]))
        .sum();
    (labels, inertia)
}

const KMEANS_RESTARTS: u64 = 10;

fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let (labels, inertia) = kmeans_once(rows, k, derive_seed(seed, "kmeans-restart", restart));
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    best.expect("at least one restart").0
}

/// Relabels clusters by descending size, ties by lowest member index.
fn canonicalize_labels(labels: &mut [usize], k: usize) -> Vec<usize> {
    let mut size = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for (i, &l) in labels.iter().enumerate() {
        size[l] += 1;
        if first[l] == usize::MAX {
            first[l] = i;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| size[b].cmp(&size[a]).then(first[a].cmp(&first[b])));
    let mut rename = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }
    for l in labels.iter_mut() {
        *l = rename[*l];
    }
    order.iter().map(|&old| size[old]).collect()
}

/// Runs the full SpRAy pipeline over a relevance set.
pub fn cluster(
    set: &RelevanceSet,
    k_nn: usize,
    pool: usize,
    max_k: usize,
    seed: u64,
) -> Result<SpectralResult> {
    let n = set.len();
    if max_k < 1 || n < max_k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= max_k <= N, got max_k {max_k} with N {n}"
        )));
    }
    let vectors = preprocess(set, pool)?;
    let affinity = knn_affinity(&vectors, k_nn)?;
    let spectrum = laplacian_spectrum(&affinity)?;
    let k = eigengap_select(&spectrum.eigenvalues, max_k).min(n);

    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..k).map(|j| spectrum.eigenvectors[j][i]).collect())
        .collect();
    let mut labels = if k == 1 {
        vec![0usize; n]
    } else {
        kmeans(&rows, k, derive_seed(seed, "spray-kmeans", 0))
    };
    let sizes = canonicalize_labels(&mut labels, k);

    let map_len = set.samples[0].len();
    let mut means = vec![vec![0.0f64; map_len]; k];
    for (sample, &l) in set.samples.iter().zip(&labels) {
        for (m, v) in means[l].iter_mut().zip(sample.data()) {
            *m += f64::from(*v);
        }
    }
    let cluster_means = means
        .into_iter()
        .zip(&sizes)
        .map(|(m, &sz)| {
            Tensor::new(
                set.map_shape().to_vec(),
                m.into_iter().map(|v| (v / sz as f64) as f32).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let strengths: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();

    let coord = |j: usize, i: usize| -> f64 {
        spectrum.eigenvectors.get(j).map_or(0.0, |v| v[i])
    };
    let embedding = (0..n).map(|i| [coord(1, i), coord(2, i)]).collect();

    Ok(SpectralResult {
        eigenvalues: spectrum.eigenvalues,
        selected_k: k,
        labels,
        cluster_means,
        strengths,
        embedding,
    })
}
