//! DBSCAN clustering and the cluster-mean gradient-sharing policy.
//!
//! When gradients are expensive (finite differences on a PDE solve), the
//! ensemble sampler amortises them: particles are clustered with DBSCAN and
//! every particle in a cluster reuses the gradient evaluated once at the
//! cluster mean, while outliers keep individual gradients. The neighbourhood
//! radius follows the `d/2` heuristic; clustering is refreshed only every
//! few iterations (see [`DbscanConfig::burn_in`] / [`DbscanConfig::period`]),
//! with the assignment reused in between.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// DBSCAN parameters plus the refresh cadence used by the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanConfig {
    /// Neighbourhood radius (Euclidean). Heuristic default: `d / 2`.
    pub epsilon: f64,
    /// Minimum neighbourhood size (the point itself counts) for a core
    /// point. Default 5, lowered to `max(2, M/10)` for small ensembles.
    pub min_neighbors: usize,
    /// Iterations before clustering is first applied.
    pub burn_in: usize,
    /// Iterations between re-clusterings afterwards.
    pub period: usize,
}

impl DbscanConfig {
    /// Defaults for an ensemble of `m` particles in `d` dimensions.
    pub fn for_problem(d: usize, m: usize) -> Self {
        let min_neighbors = if m < 50 { (m / 10).max(2) } else { 5 };
        Self {
            epsilon: d as f64 / 2.0,
            min_neighbors,
            burn_in: 10,
            period: 10,
        }
    }

    /// Check the invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dbscan epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.min_neighbors == 0 {
            return Err(Error::InvalidConfig(
                "dbscan min_neighbors must be at least 1".into(),
            ));
        }
        if self.period == 0 {
            return Err(Error::InvalidConfig(
                "dbscan period must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A clustering of `M` particles: per-particle labels and cluster means.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id per particle (`>= 0`), or `-1` for outliers.
    pub labels: Vec<i32>,
    /// Column `k` is the arithmetic mean of the particles labelled `k`.
    pub means: DMatrix<f64>,
}

impl ClusterAssignment {
    /// Number of clusters.
    pub fn n_clusters(&self) -> usize {
        self.means.ncols()
    }

    /// Number of outliers.
    pub fn n_outliers(&self) -> usize {
        self.labels.iter().filter(|&&l| l == -1).count()
    }
}

const UNVISITED: i32 = -2;
const NOISE: i32 = -1;

/// Classical DBSCAN over the columns of `points` (Euclidean metric).
///
/// A core point has at least `min_neighbors` points (itself included) within
/// `epsilon`; clusters are the density-connected closures of core points,
/// expanded in ascending index order, so the labelling is deterministic for
/// a fixed column order. Neighbourhoods use a naive `O(M^2)` scan, which is
/// plenty for the ensemble sizes involved.
pub fn dbscan(points: &DMatrix<f64>, epsilon: f64, min_neighbors: usize) -> ClusterAssignment {
    let m = points.ncols();
    let eps_sq = epsilon * epsilon;
    let neighbors_of = |i: usize| -> Vec<usize> {
        let xi = points.column(i);
        (0..m)
            .filter(|&j| (points.column(j) - xi).norm_squared() <= eps_sq)
            .collect()
    };

    let mut labels = vec![UNVISITED; m];
    let mut next_cluster = 0;
    for i in 0..m {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbors = neighbors_of(i);
        if neighbors.len() < min_neighbors {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        let mut queue: std::collections::VecDeque<usize> = neighbors.into();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster; // border point claimed by this cluster
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let nj = neighbors_of(j);
            if nj.len() >= min_neighbors {
                queue.extend(nj);
            }
        }
    }

    let d = points.nrows();
    let k = next_cluster as usize;
    let mut means = DMatrix::zeros(d, k);
    let mut counts = vec![0usize; k];
    for (j, &label) in labels.iter().enumerate() {
        if label >= 0 {
            let c = label as usize;
            means.column_mut(c).axpy(1.0, &points.column(j), 1.0);
            counts[c] += 1;
        }
    }
    for c in 0..k {
        means.column_mut(c).scale_mut(1.0 / counts[c] as f64);
    }

    ClusterAssignment { labels, means }
}

/// Gradient evaluation with cluster sharing.
///
/// Evaluates `grad_fn` once per cluster mean, copying the result to every
/// member, and once per outlier at its own position; returns the `d x M`
/// gradient matrix and the number of `grad_fn` calls
/// (`n_clusters + n_outliers`).
pub fn shared_gradients<F>(
    points: &DMatrix<f64>,
    assignment: &ClusterAssignment,
    mut grad_fn: F,
) -> Result<(DMatrix<f64>, u64)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let (d, m) = (points.nrows(), points.ncols());
    if assignment.labels.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} particles, ensemble has {m}",
            assignment.labels.len()
        )));
    }
    let mut grads = DMatrix::zeros(d, m);
    let mut calls = 0u64;
    for c in 0..assignment.n_clusters() {
        let shared = grad_fn(&assignment.means.column(c).into_owned())?;
        calls += 1;
        for (j, &label) in assignment.labels.iter().enumerate() {
            if label == c as i32 {
                grads.set_column(j, &shared);
            }
        }
    }
    for (j, &label) in assignment.labels.iter().enumerate() {
        if label == -1 {
            let own = grad_fn(&points.column(j).into_owned())?;
            calls += 1;
            grads.set_column(j, &own);
        }
    }
    Ok((grads, calls))
}
