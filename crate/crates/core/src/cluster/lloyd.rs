//! One Lloyd optimisation from a k-means++ start.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::Dataset;

#[derive(Debug, Clone)]
pub(crate) struct Run {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every assignment and every update step.
    pub history: Vec<f64>,
}

pub(crate) fn run(data: &Dataset, k: usize, rng: &mut ChaCha8Rng, max_iterations: usize, tolerance: f64) -> Run {
    let mut centroids = plus_plus(data, k, rng);
    let mut assignments = assign_all(data, &centroids);
    let mut history = vec![data.cost(&assignments, &centroids)];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        repair_empty(data, &mut assignments, &centroids, k);
        let next = means(data, &assignments, &centroids, k);
        let shift = centroids.iter().zip(&next).map(|(a, b)| sq_norm(a, b).sqrt()).fold(0.0, f64::max);
        centroids = next;
        history.push(data.cost(&assignments, &centroids));
        iterations += 1;
        if shift < tolerance {
            converged = true;
            break;
        }
        if iterations >= max_iterations {
            break;
        }
        let reassigned = assign_all(data, &centroids);
        if reassigned == assignments {
            converged = true;
            break;
        }
        assignments = reassigned;
        history.push(data.cost(&assignments, &centroids));
    }

    let inertia = *history.last().expect("history is never empty");
    Run { centroids, assignments, inertia, iterations, converged, history }
}

/// k-means++ seeding: first centre uniform, then each next centre drawn with
/// probability proportional to squared distance from the nearest chosen one.
/// When every point coincides with a chosen centre the draw falls back to uniform.
fn plus_plus(data: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let first = rng.random_range(0..n);
    let mut centroids = vec![data.values[first].clone()];
    let mut nearest: Vec<f64> = (0..n).map(|i| data.sq_dist(i, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            let mut last_positive = 0;
            for (i, &w) in nearest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = i;
                if target < w {
                    chosen = Some(i);
                    break;
                }
                target -= w;
            }
            chosen.unwrap_or(last_positive)
        } else {
            rng.random_range(0..n)
        };
        let centre = data.values[pick].clone();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(data.sq_dist(i, &centre));
        }
        centroids.push(centre);
    }
    centroids
}

/// Nearest centroid per point; ties go to the lowest index.
pub(crate) fn assign_all(data: &Dataset, centroids: &[Vec<f64>]) -> Vec<usize> {
    (0..data.len()).map(|i| nearest(centroids.iter().map(|c| data.sq_dist(i, c))).0).collect()
}

pub(crate) fn nearest(distances: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, d) in distances.enumerate() {
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Moves, for each empty cluster, the point farthest from its own centroid
/// (taken only from clusters with more than one member) into the empty one.
fn repair_empty(data: &Dataset, assignments: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut farthest: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = data.sq_dist(i, &centroids[a]);
            if farthest.is_none_or(|(_, best)| d > best) {
                farthest = Some((i, d));
            }
        }
        let Some((i, _)) = farthest else { return };
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
    }
}

/// Member means. In masked mode each slot averages only members observed at
/// that slot; a slot no member observes keeps its previous centroid value.
fn means(data: &Dataset, assignments: &[usize], previous: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let dims = data.dims();
    let mut sums = vec![vec![0.0; dims]; k];
    let mut counts = vec![vec![0usize; dims]; k];
    for (i, &a) in assignments.iter().enumerate() {
        for d in 0..dims {
            if data.observed(i, d) {
                sums[a][d] += data.values[i][d];
                counts[a][d] += 1;
            }
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((sum, count), old)| {
            sum.iter()
                .zip(&count)
                .zip(old)
                .map(|((s, &c), &o)| if c > 0 { s / c as f64 } else { o })
                .collect()
        })
        .collect()
}

pub(crate) fn sq_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
