//! Reference-mask generation by intensity clustering and binarization.
//!
//! XCT slices show three intensity populations: dark background, dark pores
//! and a bright solid surface. Clustering the pixel intensities with `K = 3`
//! gives centroids `c1 <= c2 <= c3`; pixels above `c2` are discarded and every
//! remaining nonzero pixel becomes foreground.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{median_filter, BinaryMask, GrayImage};

pub const DEFAULT_FILTER_K: usize = 3;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 0.5;

/// Sorted intensity centroids from [`pixel_kmeans`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCentroids {
    /// Ascending centroid intensities.
    pub values: Vec<f64>,
    /// Within-cluster sum of squares after each Lloyd step.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
    #[serde(skip)]
    pub iterations: usize,
}

impl IntensityCentroids {
    /// Middle centroid, used as the binarization threshold when `K = 3`.
    pub fn threshold(&self) -> f64 {
        self.values[self.values.len() / 2]
    }

    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

/// Intensity histogram collapsed to the populated levels.
struct Levels {
    value: Vec<f64>,
    weight: Vec<f64>,
}

impl Levels {
    fn of(img: &GrayImage) -> Self {
        let mut hist = [0u64; 256];
        for &p in img.data() {
            hist[p as usize] += 1;
        }
        let (value, weight) = hist
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(v, &c)| (v as f64, c as f64))
            .unzip();
        Levels { value, weight }
    }

    fn len(&self) -> usize {
        self.value.len()
    }

    fn nearest(&self, centroids: &[f64], i: usize) -> usize {
        let v = self.value[i];
        let mut best = 0;
        for (c, &m) in centroids.iter().enumerate().skip(1) {
            if (v - m).abs() < (v - centroids[best]).abs() {
                best = c;
            }
        }
        best
    }

    fn sse(&self, centroids: &[f64], assign: &[usize]) -> f64 {
        (0..self.len())
            .map(|i| self.weight[i] * (self.value[i] - centroids[assign[i]]).powi(2))
            .sum()
    }
}

/// Optimal contiguous `k`-partition of sorted levels (1-D k-means is always
/// solved by contiguous groups). Returns the group means.
fn optimal_partition_means(levels: &Levels, k: usize) -> Vec<f64> {
    let n = levels.len();
    let mut w = vec![0.0; n + 1];
    let mut s = vec![0.0; n + 1];
    let mut ss = vec![0.0; n + 1];
    for i in 0..n {
        let (v, c) = (levels.value[i], levels.weight[i]);
        w[i + 1] = w[i] + c;
        s[i + 1] = s[i] + c * v;
        ss[i + 1] = ss[i] + c * v * v;
    }
    // cost of levels[a..b]
    let cost = |a: usize, b: usize| {
        let (cw, cs) = (w[b] - w[a], s[b] - s[a]);
        (ss[b] - ss[a]) - cs * cs / cw
    };
    let inf = f64::INFINITY;
    let mut dp = vec![vec![inf; n + 1]; k + 1];
    let mut cut = vec![vec![0usize; n + 1]; k + 1];
    dp[0][0] = 0.0;
    for g in 1..=k {
        for b in g..=n {
            for a in (g - 1)..b {
                let c = dp[g - 1][a] + cost(a, b);
                if c < dp[g][b] {
                    dp[g][b] = c;
                    cut[g][b] = a;
                }
            }
        }
    }
    let mut bounds = vec![n];
    let mut b = n;
    for g in (1..=k).rev() {
        b = cut[g][b];
        bounds.push(b);
    }
    bounds.reverse();
    bounds
        .windows(2)
        .map(|ab| (s[ab[1]] - s[ab[0]]) / (w[ab[1]] - w[ab[0]]))
        .collect()
}

/// Lloyd iteration over the intensity histogram.
///
/// Seeded from the optimal contiguous partition of the histogram, so the
/// result is the global optimum of the within-cluster sum of squares; the
/// Lloyd loop then runs until the largest centroid shift drops below `tol` or
/// `max_iter` steps have been taken.
pub fn pixel_kmeans(
    img: &GrayImage,
    k: usize,
    max_iter: usize,
    tol: f64,
) -> Result<IntensityCentroids> {
    if k == 0 {
        return Err(Error::arg("cluster count must be positive"));
    }
    let levels = Levels::of(img);
    if levels.len() < k {
        return Err(Error::Degenerate {
            found: levels.len(),
            needed: k,
        });
    }
    let mut centroids = optimal_partition_means(&levels, k);
    let mut assign: Vec<usize> = (0..levels.len())
        .map(|i| levels.nearest(&centroids, i))
        .collect();
    let mut trace = vec![levels.sse(&centroids, &assign)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0.0; k];
        for (i, &a) in assign.iter().enumerate() {
            sum[a] += levels.weight[i] * levels.value[i];
            cnt[a] += levels.weight[i];
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            // empty clusters keep their previous position
            if cnt[c] > 0.0 {
                let m = sum[c] / cnt[c];
                shift = shift.max((m - centroids[c]).abs());
                centroids[c] = m;
            }
        }
        for (i, a) in assign.iter_mut().enumerate() {
            *a = levels.nearest(&centroids, i);
        }
        trace.push(levels.sse(&centroids, &assign));
        if shift < tol {
            break;
        }
    }
    centroids.sort_by(|a, b| a.partial_cmp(b).expect("finite centroids"));
    Ok(IntensityCentroids {
        values: centroids,
        objective_trace: trace,
        iterations,
    })
}

/// Two-pass binarization: pixels above `threshold` are cleared, then every
/// pixel above `background_floor` is foreground. `background_floor = 0` is the
/// literal rule (every nonzero survivor is foreground).
pub fn binarize(img: &GrayImage, threshold: f64, background_floor: u8) -> BinaryMask {
    let data = img
        .data()
        .iter()
        .map(|&p| {
            let p = if p as f64 > threshold { 0 } else { p };
            p > background_floor
        })
        .collect();
    BinaryMask::new(img.width(), img.height(), data).expect("same dimensions as the image")
}

/// Settings for [`make_reference_mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdParams {
    pub filter_k: usize,
    pub background_floor: u8,
    /// Optional region of interest; foreground outside it is dropped.
    pub roi: Option<BinaryMask>,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            filter_k: DEFAULT_FILTER_K,
            background_floor: 0,
            roi: None,
        }
    }
}

/// A reference mask and the intensity centroids it was cut from.
#[derive(Debug, Clone)]
pub struct ReferenceMask {
    pub mask: BinaryMask,
    pub centroids: IntensityCentroids,
}

/// JSON sidecar stored next to every reference mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSidecar {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub threshold: f64,
    pub filter_k: usize,
    pub background_floor: u8,
    pub roi: bool,
    pub foreground_pixels: usize,
}

impl ReferenceMask {
    pub fn sidecar(&self, params: &ThresholdParams) -> ReferenceSidecar {
        let v = &self.centroids.values;
        ReferenceSidecar {
            c1: v[0],
            c2: v[1],
            c3: v[2],
            threshold: self.centroids.threshold(),
            filter_k: params.filter_k,
            background_floor: params.background_floor,
            roi: params.roi.is_some(),
            foreground_pixels: self.mask.count(),
        }
    }
}

/// Median filter, three-level intensity clustering, binarization at the middle
/// centroid.
pub fn make_reference_mask(img: &GrayImage, params: &ThresholdParams) -> Result<ReferenceMask> {
    if let Some(roi) = &params.roi {
        if roi.width() != img.width() || roi.height() != img.height() {
            return Err(Error::arg(format!(
                "roi is {}x{} but image is {}x{}",
                roi.width(),
                roi.height(),
                img.width(),
                img.height()
            )));
        }
    }
    let filtered = median_filter(img, params.filter_k)?;
    let centroids = pixel_kmeans(&filtered, 3, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let mut mask = binarize(&filtered, centroids.threshold(), params.background_floor);
    if let Some(roi) = &params.roi {
        mask = mask.and(roi);
    }
    Ok(ReferenceMask { mask, centroids })
}
