//! Lloyd's k-means with k-means++ seeding.
//!
//! An empty cluster after the mean update is re-seeded at the point
//! farthest from its own centroid; each such event is counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingRecord;
use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// Cluster id per input record, in input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step; non-increasing.
    pub inertia_history: Vec<f64>,
    pub reseeds: usize,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > r && d > 0.0
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            // Every point coincides with a centroid already.
            0
        };
        centroids.push(points[idx].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

pub fn kmeans_assign(records: &[EmbeddingRecord], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let n = records.len();
    if k == 0 || k > n {
        return Err(contract(format!("k must be in 1..={n}, got {k}")));
    }
    if max_iters == 0 {
        return Err(contract("max_iters must be at least 1"));
    }
    let dim = records[0].vector.len();
    if dim == 0 || records.iter().any(|r| r.vector.len() != dim || !r.vector.iter().all(|v| v.is_finite())) {
        return Err(contract("embeddings must be non-empty, finite and of one dimension"));
    }
    let points: Vec<&[f64]> = records.iter().map(|r| r.vector.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(&points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut inertia_history = Vec::new();
    let mut reseeds = 0;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let step: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centroids)).collect();
        inertia_history.push(step.iter().map(|s| s.1).sum());
        let next: Vec<usize> = step.iter().map(|s| s.0).collect();
        if next == assignments {
            break;
        }
        assignments = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            sums[j].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let mut far: Vec<f64> = points.iter().zip(&assignments).map(|(p, &j)| sq_dist(p, &centroids[j])).collect();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let idx = (0..n).fold(0, |best, i| if far[i] > far[best] { i } else { best });
            centroids[j] = points[idx].to_vec();
            far[idx] = 0.0;
            reseeds += 1;
        }
    }
    Ok(KMeansResult { assignments, centroids, inertia_history, reseeds, iterations })
}
