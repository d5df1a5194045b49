//! Mahalanobis scoring over K-means clusters.
//!
//! Embeddings are partitioned by Lloyd's algorithm; each cluster keeps its
//! mean, its population covariance and the inverse of the regularized
//! covariance `Sigma + eps_reg * (trace(Sigma) / dim) * I`. The score of `h` is
//! the reciprocal of its smallest squared Mahalanobis distance, clamped below
//! at `eps_d`, so larger means more in-distribution.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::seed::rng;
use crate::{Error, Result, Tensor};

pub const DEFAULT_EPS_REG: f64 = 1e-3;
pub const DEFAULT_EPS_D: f64 = 1e-12;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub mean: Vec<f64>,
    /// Population covariance (divisor `n`), before regularization.
    pub cov: Tensor,
    /// Inverse of the regularized covariance.
    pub inv_cov: Tensor,
}

impl ClusterStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(h - mean)^T inv_cov (h - mean)`.
    pub fn sq_distance(&self, h: &[f64]) -> f64 {
        let d: Vec<f64> = h.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let n = d.len();
        let mut total = 0.0;
        for (i, di) in d.iter().enumerate() {
            let row = &self.inv_cov.data()[i * n..(i + 1) * n];
            let dot: f64 = row.iter().zip(&d).map(|(a, b)| a * b).sum();
            total += di * dot;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisScorer {
    pub stats: Vec<ClusterStats>,
    pub eps_reg: f64,
    pub eps_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorerConfig {
    pub clusters: usize,
    pub eps_reg: f64,
    pub eps_d: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            clusters: 1,
            eps_reg: DEFAULT_EPS_REG,
            eps_d: DEFAULT_EPS_D,
        }
    }
}

impl MahalanobisScorer {
    /// Fits cluster statistics on `embeddings` (one row each).
    pub fn fit(embeddings: &[Vec<f64>], config: &ScorerConfig, seed: u64) -> Result<Self> {
        let q = config.clusters.max(1);
        if embeddings.len() <= q {
            return Err(Error::TooFewSamples {
                clusters: q,
                got: embeddings.len(),
            });
        }
        let dim = embeddings[0].len();
        if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
            return Err(Error::ShapeMismatch {
                op: "scorer fit",
                lhs: (1, dim),
                rhs: (1, bad.len()),
            });
        }
        let assignment = if q == 1 {
            vec![0; embeddings.len()]
        } else {
            kmeans(embeddings, q, seed).assignment
        };
        let groups = merge_small_clusters(embeddings, assignment);
        let stats = groups
            .iter()
            .map(|members| cluster_stats(embeddings, members, config.eps_reg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stats,
            eps_reg: config.eps_reg,
            eps_d: config.eps_d,
        })
    }

    pub fn dim(&self) -> usize {
        self.stats[0].dim()
    }

    pub fn clusters(&self) -> usize {
        self.stats.len()
    }

    /// Smallest squared Mahalanobis distance over clusters (ties: lowest index).
    pub fn min_sq_distance(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "md_score",
                lhs: (1, self.dim()),
                rhs: (1, h.len()),
            });
        }
        let mut best = f64::INFINITY;
        for s in &self.stats {
            let d = s.sq_distance(h);
            if d < best {
                best = d;
            }
        }
        Ok(best)
    }

    /// `1 / max(min_q d_q^2, eps_d)`.
    pub fn md_score(&self, h: &[f64]) -> Result<f64> {
        let d = self.min_sq_distance(h)?;
        let score = 1.0 / d.max(self.eps_d);
        if !score.is_finite() {
            return Err(Error::NonFinite("md_score"));
        }
        Ok(score)
    }
}

fn cluster_stats(embeddings: &[Vec<f64>], members: &[usize], eps_reg: f64) -> Result<ClusterStats> {
    let dim = embeddings[0].len();
    let n = members.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in members {
        for (m, x) in mean.iter_mut().zip(&embeddings[i]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Tensor::zeros(dim, dim);
    for &i in members {
        let d: Vec<f64> = embeddings[i].iter().zip(&mean).map(|(x, m)| x - m).collect();
        for a in 0..dim {
            let da = d[a];
            if da == 0.0 {
                continue;
            }
            let row = cov.row_mut(a);
            for (c, db) in row.iter_mut().zip(&d) {
                *c += da * db;
            }
        }
    }
    cov.data_mut().iter_mut().for_each(|c| *c /= n);
    let inv_cov = regularized_inverse(&cov, eps_reg)?;
    Ok(ClusterStats { mean, cov, inv_cov })
}

/// Inverse of `cov + eps_reg * (trace / dim) * I`. A zero-trace covariance
/// falls back to a unit ridge scale.
pub fn regularized_inverse(cov: &Tensor, eps_reg: f64) -> Result<Tensor> {
    let dim = cov.rows();
    let scale = cov.trace() / dim as f64;
    let ridge = eps_reg * if scale > 0.0 { scale } else { 1.0 };
    let mut reg = cov.clone();
    for i in 0..dim {
        reg.set(i, i, reg.get(i, i) + ridge);
    }
    spd_inverse(&reg)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "cholesky",
            lhs: a.shape(),
            rhs: (n, n),
        });
    }
    let mut l = Tensor::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let d = libm::sqrt(d);
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    let l = cholesky(a)?;
    // Solve L Y = I, then L^T X = Y, column by column.
    let mut inv = Tensor::zeros(n, n);
    let mut y = vec![0.0; n];
    for col in 0..n {
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l.get(k, i) * inv.get(k, col);
            }
            inv.set(i, col, s / l.get(i, i));
        }
    }
    // Symmetrize away rounding asymmetry.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
            inv.set(i, j, v);
            inv.set(j, i, v);
        }
    }
    Ok(inv)
}

/// Result of Lloyd's K-means.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn sq_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_euclid(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding; deterministic for a given seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> KMeans {
    let mut rng = rng(seed);
    let n = points.len();
    let k = k.clamp(1, n.max(1));
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut dist: Vec<f64> = points.iter().map(|p| sq_euclid(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_euclid(p, &centroids[centroids.len() - 1]));
        }
    }

    let dim = points[0].len();
    let mut assignment = vec![0; n];
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(libm::sqrt(sq_euclid(&new, &centroids[c])));
            centroids[c] = new;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    for (a, p) in assignment.iter_mut().zip(points) {
        *a = nearest(p, &centroids);
    }
    KMeans {
        centroids,
        assignment,
        iterations,
    }
}

/// Groups members by cluster, folding clusters with fewer than two members
/// into the cluster whose mean is nearest.
fn merge_small_clusters(points: &[Vec<f64>], assignment: Vec<usize>) -> Vec<Vec<usize>> {
    let k = assignment.iter().copied().max().map_or(1, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        groups[a].push(i);
    }
    groups.retain(|g| !g.is_empty());
    while let Some(small) = groups.iter().position(|g| g.len() < 2) {
        if groups.len() == 1 {
            break;
        }
        let members = groups.remove(small);
        let means: Vec<Vec<f64>> = groups.iter().map(|g| group_mean(points, g)).collect();
        log::warn!("cluster with {} member(s) merged into its nearest neighbour", members.len());
        for i in members {
            let target = nearest(&points[i], &means);
            groups[target].push(i);
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

fn group_mean(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; points[0].len()];
    for &i in members {
        for (m, x) in mean.iter_mut().zip(&points[i]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= members.len() as f64);
    mean
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    pub score: f64,
    pub threshold: f64,
}

/// In-distribution iff `score >= threshold`.
pub fn decide(score: f64, threshold: f64) -> Decision {
    let verdict = if score >= threshold { Verdict::Id } else { Verdict::Ood };
    Decision {
        verdict,
        score,
        threshold,
    }
}
