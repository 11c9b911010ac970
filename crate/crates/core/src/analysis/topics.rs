use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterOptions {
    pub k: usize,
    pub rank: usize,
    pub als_sweeps: usize,
    pub ridge: f64,
    pub kmeans_iterations: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self { k: 16, rank: 8, als_sweeps: 20, ridge: 0.1, kmeans_iterations: 50 }
    }
}

/// Item embeddings from the co-occurrence factorization and their cluster
/// assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicModel {
    /// `n_items × rank`, rows L2-normalised (all-zero for unseen items).
    pub embeddings: DMatrix<f64>,
    pub centroids: DMatrix<f64>,
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl TopicModel {
    pub fn cluster_of(&self, item: usize) -> Result<usize> {
        self.assignment.get(item).copied().ok_or(Error::OutOfRange {
            what: "item",
            index: item,
            bound: self.assignment.len(),
        })
    }
}

/// Symmetric counts of consecutive item pairs within each sequence.
pub fn cooccurrence(sequences: &[Vec<usize>], n_items: usize) -> Result<DMatrix<f64>> {
    let mut c = DMatrix::zeros(n_items, n_items);
    for seq in sequences {
        if let Some(&bad) = seq.iter().find(|&&i| i >= n_items) {
            return Err(Error::OutOfRange { what: "item", index: bad, bound: n_items });
        }
        for w in seq.windows(2) {
            c[(w[0], w[1])] += 1.0;
            c[(w[1], w[0])] += 1.0;
        }
    }
    Ok(c)
}

/// Rank-`r` factorization `M ≈ U Vᵀ` by alternating ridge regressions over
/// every entry of `M`. Returns `U`.
pub fn als(m: &DMatrix<f64>, rank: usize, sweeps: usize, ridge: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if rank == 0 || rank > m.ncols() {
        return Err(Error::invalid(format!("factorization rank must lie in 1..={}", m.ncols())));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge must be positive"));
    }
    let mut v = DMatrix::from_fn(m.ncols(), rank, |_, _| rng.random_range(-0.1..0.1));
    let mut u = DMatrix::zeros(m.nrows(), rank);
    let solve = |fixed: &DMatrix<f64>, target: DMatrix<f64>| -> Result<DMatrix<f64>> {
        // rows of `target` · fixed · (fixedᵀ fixed + ridge I)⁻¹
        let gram = fixed.transpose() * fixed + DMatrix::identity(rank, rank) * ridge;
        let chol = gram.cholesky().ok_or_else(|| Error::NonFinite("ALS normal equations".into()))?;
        let rhs = (target * fixed).transpose();
        Ok(chol.solve(&rhs).transpose())
    };
    for _ in 0..sweeps {
        u = solve(&v, m.clone())?;
        v = solve(&u, m.transpose())?;
    }
    Ok(u)
}

/// k-means with k-means++ seeding on the rows listed in `points`. Returns the
/// centroids.
pub fn kmeans(
    data: &DMatrix<f64>,
    points: &[usize],
    k: usize,
    iterations: usize,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", points.len())));
    }
    let dim = data.ncols();
    let dist =
        |i: usize, c: &DMatrix<f64>, j: usize| -> f64 { (0..dim).map(|d| (data[(i, d)] - c[(j, d)]).powi(2)).sum() };
    let mut centroids = DMatrix::zeros(k, dim);
    let first = points[rng.random_range(0..points.len())];
    centroids.set_row(0, &data.row(first));
    let mut nearest: Vec<f64> = points.iter().map(|&i| dist(i, &centroids, 0)).collect();
    for j in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (n, &d) in nearest.iter().enumerate() {
                if u < d {
                    chosen = n;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.set_row(j, &data.row(points[pick]));
        for (n, &i) in points.iter().enumerate() {
            nearest[n] = nearest[n].min(dist(i, &centroids, j));
        }
    }

    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..iterations {
        let mut changed = false;
        for (n, &i) in points.iter().enumerate() {
            let best = closest(|j| dist(i, &centroids, j), k);
            if labels[n] != best {
                labels[n] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (n, &i) in points.iter().enumerate() {
            counts[labels[n]] += 1;
            for d in 0..dim {
                sums[(labels[n], d)] += data[(i, d)];
            }
        }
        for j in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[j] > 0 {
                for d in 0..dim {
                    centroids[(j, d)] = sums[(j, d)] / counts[j] as f64;
                }
            }
        }
    }
    Ok(centroids)
}

/// Index of the smallest `dist(j)`, lowest index on ties.
fn closest(dist: impl Fn(usize) -> f64, k: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for j in 0..k {
        let d = dist(j);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Co-occurrence counts → `log1p` → ALS embeddings → k-means++ over the
/// items that occur → every item of the catalog assigned to its nearest
/// centroid.
pub fn build_topic_clusters(
    sequences: &[Vec<usize>],
    n_items: usize,
    options: ClusterOptions,
    seed: u64,
) -> Result<TopicModel> {
    let mut seen = vec![false; n_items];
    for &i in sequences.iter().flatten() {
        if i < n_items {
            seen[i] = true;
        }
    }
    let distinct: Vec<usize> = (0..n_items).filter(|&i| seen[i]).collect();
    if distinct.is_empty() {
        return Err(Error::invalid("no interactions to cluster"));
    }
    if options.k == 0 || options.k > distinct.len() {
        return Err(Error::invalid(format!("k = {} exceeds the {} distinct items", options.k, distinct.len())));
    }
    let counts = cooccurrence(sequences, n_items)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = als(&counts.map(f64::ln_1p), options.rank, options.als_sweeps, options.ridge, &mut rng)?;
    for mut row in emb.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let centroids = kmeans(&emb, &distinct, options.k, options.kmeans_iterations, &mut rng)?;
    let assignment = (0..n_items)
        .map(|i| closest(|j| (0..emb.ncols()).map(|d| (emb[(i, d)] - centroids[(j, d)]).powi(2)).sum(), options.k))
        .collect();
    Ok(TopicModel { embeddings: emb, centroids, assignment, k: options.k })
}
