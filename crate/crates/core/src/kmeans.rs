//! Euclidean k-means with k-means++ seeding, used in the log domain by the
//! log-Euclidean initializers.

use nalgebra::DVector;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    pub iterations: usize,
}

fn nearest(p: &DVector<f64>, centroids: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (z, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (z, d);
        }
    }
    best
}

/// k-means++ seeds. When every remaining point coincides with a chosen seed
/// the lowest unchosen index is taken.
pub fn kmeans_pp_seeds<R: Rng>(points: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| (p - &points[chosen[0]]).norm_squared())
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min((p - &points[next]).norm_squared());
        }
    }
    chosen
}

/// Lloyd iterations from k-means++ seeds until assignments stop changing.
/// Ties go to the lower cluster index; an empty cluster keeps its centroid.
pub fn kmeans<R: Rng>(
    points: &[DVector<f64>],
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> KMeansResult {
    let mut centroids: Vec<DVector<f64>> = kmeans_pp_seeds(points, k, rng)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let dim = points.first().map_or(0, |p| p.len());
        let mut sums = vec![DVector::zeros(dim); centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &z) in points.iter().zip(&assignments) {
            sums[z] += p;
            counts[z] += 1;
        }
        for z in 0..centroids.len() {
            if counts[z] > 0 {
                centroids[z] = &sums[z] / counts[z] as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    KMeansResult {
        assignments,
        centroids,
        iterations,
    }
}
