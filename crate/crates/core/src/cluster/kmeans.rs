use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::distance::{squared_euclidean, Distance};
use super::{check_inputs, ClusterModel, ImageVector, Method};
use crate::error::Result;

/// Default cap on the number of partitions searched exhaustively.
pub const EXACT_LIMIT: u64 = 100_000;

#[derive(Debug, Clone)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves by more than this (intensity units).
    pub tol: f64,
    /// Independent seeded restarts; the lowest objective wins.
    pub n_init: usize,
    /// Inputs with at most this many k-partitions are also solved by
    /// exhaustive enumeration, which makes the result globally optimal.
    /// 0 disables it.
    pub exact_limit: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 3,
            seed: 0,
            max_iter: 300,
            tol: 1e-4,
            n_init: 10,
            exact_limit: EXACT_LIMIT,
        }
    }
}

struct Run {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    trace: Vec<f64>,
}

impl Run {
    fn objective(&self) -> f64 {
        *self.trace.last().expect("at least one iteration")
    }
}

/// k-means++ seeding: the first center uniformly, the rest with probability
/// proportional to the squared distance to the nearest chosen center.
fn plus_plus(data: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|x| squared_euclidean(x, data[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // every point coincides with a center; take any unused index
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(squared_euclidean(x, data[next]));
        }
    }
    chosen
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, squared_euclidean(x, &centroids[0]));
    for (c, m) in centroids.iter().enumerate().skip(1) {
        let d = squared_euclidean(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(data: &[&[f64]], params: &KMeansParams, rng: &mut ChaCha8Rng) -> Run {
    let (n, k, dim) = (data.len(), params.k, data[0].len());
    let mut centroids: Vec<Vec<f64>> = plus_plus(data, k, rng)
        .into_iter()
        .map(|i| data[i].to_vec())
        .collect();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..params.max_iter.max(1) {
        let nearest_all: Vec<(usize, f64)> =
            data.par_iter().map(|x| nearest(x, &centroids)).collect();
        let mut next: Vec<usize> = nearest_all.iter().map(|p| p.0).collect();

        // Repair empty clusters with the point farthest from its centroid.
        let mut dist: Vec<f64> = nearest_all.iter().map(|p| p.1).collect();
        for c in 0..k {
            if next.contains(&c) {
                continue;
            }
            let mut sizes = vec![0usize; k];
            for &a in &next {
                sizes[a] += 1;
            }
            let far = (0..n)
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("n >= k leaves a cluster with spare members");
            next[far] = c;
            dist[far] = 0.0;
            centroids[c] = data[far].to_vec();
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&next) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(squared_euclidean(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        let objective: f64 = data
            .par_iter()
            .zip(next.par_iter())
            .map(|(x, &a)| squared_euclidean(x, &centroids[a]))
            .sum();
        trace.push(objective);
        let stable = next == assignments;
        assignments = next;
        if stable || shift <= params.tol {
            break;
        }
    }
    Run {
        assignments,
        centroids,
        trace,
    }
}

/// Stirling number of the second kind, saturating.
pub(crate) fn partition_count(n: usize, k: usize) -> u64 {
    let mut row = vec![0u64; k + 1];
    row[0] = 1;
    for _ in 0..n {
        for j in (1..=k).rev() {
            row[j] = row[j - 1].saturating_add((j as u64).saturating_mul(row[j]));
        }
        row[0] = 0;
    }
    row[k]
}

fn sse(data: &[&[f64]], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, f64) {
    let dim = data[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.iter().zip(labels) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x.iter()) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let total = data
        .iter()
        .zip(labels)
        .map(|(x, &a)| squared_euclidean(x, &means[a]))
        .sum();
    (means, total)
}

/// Labels, means and cost.
type Partition = (Vec<usize>, Vec<Vec<f64>>, f64);

/// Minimum-SSE partition into exactly `k` nonempty groups, by enumerating
/// restricted growth strings.
fn exhaustive(data: &[&[f64]], k: usize) -> Partition {
    fn rec(
        data: &[&[f64]],
        k: usize,
        labels: &mut Vec<usize>,
        used: usize,
        best: &mut Option<Partition>,
    ) {
        let n = data.len();
        if labels.len() == n {
            if used == k {
                let (means, cost) = sse(data, labels, k);
                if best.as_ref().is_none_or(|b| cost < b.2) {
                    *best = Some((labels.clone(), means, cost));
                }
            }
            return;
        }
        // not enough points left to open the remaining groups
        if k - used > n - labels.len() {
            return;
        }
        for g in 0..(used + 1).min(k) {
            labels.push(g);
            rec(data, k, labels, used.max(g + 1), best);
            labels.pop();
        }
    }
    let mut best = None;
    rec(data, k, &mut Vec::with_capacity(data.len()), 0, &mut best);
    best.expect("n >= k admits a partition")
}

/// Lloyd k-means over flattened layer images.
///
/// Small inputs (see [`KMeansParams::exact_limit`]) are finished by an
/// exhaustive search, so their objective is the global minimum.
///
/// Each restart `r` draws its k-means++ seeding from ChaCha8 seeded with
/// `seed` on stream `r`, so results are reproducible across platforms.
pub fn kmeans_images(images: &[ImageVector], params: &KMeansParams) -> Result<ClusterModel> {
    check_inputs(images, params.k)?;
    let data: Vec<&[f64]> = images.iter().map(|v| v.values.as_slice()).collect();
    let mut best: Option<Run> = None;
    for restart in 0..params.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(restart as u64);
        let run = lloyd(&data, params, &mut rng);
        if best.as_ref().is_none_or(|b| run.objective() < b.objective()) {
            best = Some(run);
        }
    }
    let mut run = best.expect("at least one restart");
    if partition_count(data.len(), params.k) <= params.exact_limit {
        let (labels, means, cost) = exhaustive(&data, params.k);
        if cost < run.objective() {
            run.assignments = labels;
            run.centroids = means;
            run.trace.push(cost);
        }
    }
    let first = &images[0];
    let centroids = run
        .centroids
        .into_iter()
        .enumerate()
        .map(|(c, values)| ImageVector {
            source_id: format!("centroid_{c}"),
            width: first.width,
            height: first.height,
            values,
        })
        .collect();
    Ok(ClusterModel {
        method: Method::Kmeans,
        distance: Distance::Euclidean,
        k: params.k,
        seed: params.seed,
        ids: images.iter().map(|v| v.source_id.clone()).collect(),
        assignments: run.assignments,
        centroids,
        medoids: None,
        objective: *run.trace.last().expect("nonempty trace"),
        objective_trace: run.trace,
    })
}
