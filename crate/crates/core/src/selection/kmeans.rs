//! Lloyd's k-means with k-means++ seeding.
//!
//! Ties are broken toward the lowest centroid index. A cluster left empty by
//! an assignment step takes the point farthest from its own centroid among
//! clusters that can spare one, so every cluster keeps at least one member.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub k: usize,
    /// Total inertia after each completed Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl ClusterResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng + ?Sized>(points: &ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points
        .outer_iter()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // All remaining mass is zero: duplicates only. Take the lowest
            // index not yet chosen.
            Err(_) => (0..n).find(|i| !chosen.contains(i)).unwrap_or(0),
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points.outer_iter()) {
            *d = d.min(sq_dist(p, points.row(next)));
        }
    }
    points.select(Axis(0), &chosen)
}

fn update_centroids(points: &ArrayView2<f64>, assignments: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (p, &a) in points.outer_iter().zip(assignments) {
        let mut row = sums.row_mut(a);
        row += &p;
        counts[a] += 1;
    }
    for (j, count) in counts.into_iter().enumerate() {
        if count > 0 {
            let mean = &sums.row(j) / count as f64;
            centroids.row_mut(j).assign(&mean);
        }
    }
}

/// Moves one point into each empty cluster.
fn fill_empty(points: &ArrayView2<f64>, assignments: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.outer_iter().enumerate() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, centroids.row(assignments[i]));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("n >= k guarantees a donor cluster");
        assignments[i] = empty;
        centroids.row_mut(empty).assign(&points.row(i));
    }
}

fn inertia(points: &ArrayView2<f64>, assignments: &[usize], centroids: &Array2<f64>) -> f64 {
    points
        .outer_iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, centroids.row(a)))
        .sum()
}

/// Clusters the rows of `points` into `k` groups.
pub fn kmeans<R: Rng + ?Sized>(
    points: &ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<ClusterResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if n < k {
        return Err(Error::arg(format!("cannot form {k} clusters from {n} points")));
    }
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        let mut next: Vec<usize> = points.outer_iter().map(|p| nearest(p, &centroids).0).collect();
        fill_empty(points, &mut next, &mut centroids);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        update_centroids(points, &assignments, &mut centroids);
        history.push(inertia(points, &assignments, &centroids));
    }

    Ok(ClusterResult {
        assignments,
        centroids,
        k,
        inertia_history: history,
        converged,
    })
}

/// Plain mean of the rows, used as the `k = 1` reference.
pub fn mean_row(points: &ArrayView2<f64>) -> Array1<f64> {
    points.mean_axis(Axis(0)).expect("non-empty")
}
