use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::distance::{dtw, euclidean, Distance};
use super::kmeans::EXACT_LIMIT;
use super::{check_inputs, ClusterModel, ImageVector, Method};
use crate::error::Result;

/// How images are turned into sequences before DTW.
///
/// Full-resolution slices flatten to ~10^6 samples, far beyond what an
/// unconstrained `O(mn)` DTW can handle, so images are area-averaged down to
/// `downsample_side` and a Sakoe-Chiba band of `band_fraction * length` is
/// applied.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwSettings {
    pub downsample_side: Option<usize>,
    pub band_fraction: Option<f64>,
}

impl Default for DtwSettings {
    fn default() -> Self {
        Self {
            downsample_side: Some(64),
            band_fraction: Some(0.1),
        }
    }
}

impl DtwSettings {
    /// Exact DTW on the raw flattened sequences.
    pub fn unconstrained() -> Self {
        Self {
            downsample_side: None,
            band_fraction: None,
        }
    }

    fn prepare(&self, img: &ImageVector) -> Vec<f64> {
        match self.downsample_side {
            Some(side) if side < img.width || side < img.height => area_downsample(img, side),
            _ => img.values.clone(),
        }
    }

    fn band(&self, len: usize) -> Option<usize> {
        self.band_fraction
            .map(|f| ((f * len as f64).ceil() as usize).min(len))
    }
}

/// Box-average an image onto a `side x side` grid.
fn area_downsample(img: &ImageVector, side: usize) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let ow = side.min(w);
    let oh = side.min(h);
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        let (y0, y1) = (oy * h / oh, ((oy + 1) * h / oh).max(oy * h / oh + 1));
        for ox in 0..ow {
            let (x0, x1) = (ox * w / ow, ((ox + 1) * w / ow).max(ox * w / ow + 1));
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += img.values[y * w + x0..y * w + x1].iter().sum::<f64>();
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct KMedoidsParams {
    pub k: usize,
    pub distance: Distance,
    pub dtw: DtwSettings,
    pub seed: u64,
    /// Maximum accepted swaps per run.
    pub max_iter: usize,
    /// Independent runs with different seeded first medoids.
    pub n_init: usize,
    /// Inputs with at most this many candidate medoid sets are also solved
    /// exhaustively. 0 disables it.
    pub exact_limit: u64,
}

impl Default for KMedoidsParams {
    fn default() -> Self {
        Self {
            k: 3,
            distance: Distance::Euclidean,
            dtw: DtwSettings::default(),
            seed: 0,
            max_iter: 100,
            n_init: 3,
            exact_limit: EXACT_LIMIT,
        }
    }
}

/// Symmetric pairwise distance matrix, row-major `n x n`.
fn distance_matrix(images: &[ImageVector], params: &KMedoidsParams) -> Result<Vec<f64>> {
    let n = images.len();
    let seqs: Vec<Vec<f64>> = match params.distance {
        Distance::Euclidean => images.iter().map(|v| v.values.clone()).collect(),
        Distance::Dtw => images.iter().map(|v| params.dtw.prepare(v)).collect(),
    };
    let band = params.dtw.band(seqs[0].len());
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| match params.distance {
            Distance::Euclidean => euclidean(&seqs[i], &seqs[j]),
            Distance::Dtw => dtw(&seqs[i], &seqs[j], band),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut m = vec![0.0; n * n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        m[i * n + j] = d;
        m[j * n + i] = d;
    }
    Ok(m)
}

struct Pam<'a> {
    d: &'a [f64],
    n: usize,
}

impl Pam<'_> {
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn cost(&self, medoids: &[usize]) -> f64 {
        (0..self.n)
            .map(|i| {
                medoids
                    .iter()
                    .map(|&m| self.dist(i, m))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }

    /// Nearest medoid per point; medoids always own themselves.
    fn assign(&self, medoids: &[usize]) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                if let Some(c) = medoids.iter().position(|&m| m == i) {
                    return c;
                }
                let mut best = 0;
                for c in 1..medoids.len() {
                    if self.dist(i, medoids[c]) < self.dist(i, medoids[best]) {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Seeded first medoid, then farthest-first.
    fn build(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut medoids = vec![rng.random_range(0..self.n)];
        while medoids.len() < k {
            let next = (0..self.n)
                .filter(|i| !medoids.contains(i))
                .map(|i| {
                    let near = medoids
                        .iter()
                        .map(|&m| self.dist(i, m))
                        .fold(f64::INFINITY, f64::min);
                    (i, near)
                })
                .fold(None::<(usize, f64)>, |best, cand| match best {
                    Some(b) if b.1 >= cand.1 => Some(b),
                    _ => Some(cand),
                })
                .expect("n >= k")
                .0;
            medoids.push(next);
        }
        medoids
    }

    /// Lowest-cost medoid set over all `C(n, k)` candidates.
    fn exhaustive(&self, k: usize) -> (Vec<usize>, f64) {
        let mut set: Vec<usize> = (0..k).collect();
        let mut best = (set.clone(), self.cost(&set));
        loop {
            // next combination in lexicographic order
            let Some(i) = (0..k).rev().find(|&i| set[i] < self.n - k + i) else {
                return best;
            };
            set[i] += 1;
            for j in i + 1..k {
                set[j] = set[j - 1] + 1;
            }
            let c = self.cost(&set);
            if c < best.1 {
                best = (set.clone(), c);
            }
        }
    }

    /// Best-improvement swaps until no single swap strictly lowers the cost.
    fn swap(&self, medoids: &mut [usize], max_iter: usize) -> Vec<f64> {
        let mut current = self.cost(medoids);
        let mut trace = vec![current];
        for _ in 0..max_iter {
            let mut best: Option<(usize, usize, f64)> = None;
            for slot in 0..medoids.len() {
                let old = medoids[slot];
                for h in 0..self.n {
                    if medoids.contains(&h) {
                        continue;
                    }
                    medoids[slot] = h;
                    let c = self.cost(medoids);
                    medoids[slot] = old;
                    if c < best.map_or(current, |b| b.2) {
                        best = Some((slot, h, c));
                    }
                }
            }
            match best {
                Some((slot, h, c)) => {
                    medoids[slot] = h;
                    current = c;
                    trace.push(c);
                }
                None => break,
            }
        }
        trace
    }
}

/// Binomial coefficient, saturating.
fn combinations(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut c: u64 = 1;
    for i in 0..k {
        c = match c.checked_mul((n - i) as u64) {
            Some(v) => v / (i as u64 + 1),
            None => return u64::MAX,
        };
    }
    c
}

/// PAM-style k-medoids with a BUILD-like seeded start.
///
/// The cost is the sum over points of the distance to the nearest medoid;
/// a swap is accepted only when it strictly lowers that cost. Small inputs
/// (see [`KMedoidsParams::exact_limit`]) are finished by an exhaustive search
/// over medoid sets.
pub fn kmedoids_images(images: &[ImageVector], params: &KMedoidsParams) -> Result<ClusterModel> {
    check_inputs(images, params.k)?;
    let d = distance_matrix(images, params)?;
    let pam = Pam {
        d: &d,
        n: images.len(),
    };
    let mut best: Option<(Vec<usize>, Vec<f64>)> = None;
    for restart in 0..params.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(restart as u64);
        let mut medoids = pam.build(params.k, &mut rng);
        let trace = pam.swap(&mut medoids, params.max_iter);
        let cost = *trace.last().expect("nonempty trace");
        if best.as_ref().is_none_or(|b| cost < *b.1.last().unwrap()) {
            best = Some((medoids, trace));
        }
    }
    let (mut medoids, mut trace) = best.expect("at least one run");
    if combinations(images.len(), params.k) <= params.exact_limit {
        let (set, cost) = pam.exhaustive(params.k);
        if cost < *trace.last().expect("nonempty trace") {
            medoids = set;
            trace.push(cost);
        }
    }
    let assignments = pam.assign(&medoids);
    Ok(ClusterModel {
        method: Method::Kmedoids,
        distance: params.distance,
        k: params.k,
        seed: params.seed,
        ids: images.iter().map(|v| v.source_id.clone()).collect(),
        assignments,
        centroids: medoids.iter().map(|&m| images[m].clone()).collect(),
        objective: *trace.last().expect("nonempty trace"),
        medoids: Some(medoids),
        objective_trace: trace,
    })
}
