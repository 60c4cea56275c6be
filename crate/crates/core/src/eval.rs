//! Scoring: Dice overlap, bootstrap confidence intervals, instance counts and
//! porosity.

use serde::{Deserialize, Serialize};

use crate::backend::{segment_with_prompts, BackendProvider};
use crate::cluster::CentroidRecord;
use crate::error::{Error, Result};
use crate::image::{median_filter, to_model_input, BinaryMask, GrayImage};
use crate::prompt::bootstrap_prompt;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Dice similarity `2|M ∩ R| / (|M| + |R|)`. Two empty masks score 1.0.
pub fn dsc(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    Ok(dsc_checked(pred, reference)?.unwrap_or(1.0))
}

/// Like [`dsc`], but `None` when both masks are empty so callers can exclude
/// the pair instead of counting it as perfect agreement.
pub fn dsc_checked(pred: &BinaryMask, reference: &BinaryMask) -> Result<Option<f64>> {
    if !pred.same_shape(reference) {
        return Err(Error::arg(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            reference.width(),
            reference.height()
        )));
    }
    let (mut both, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        a += p as usize;
        b += r as usize;
        both += (p && r) as usize;
    }
    if a + b == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (a + b) as f64))
}

/// Linear-interpolation quantile of sorted data: with `h = (n - 1) p`,
/// `q = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution summary of one image's bootstrap scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub length: f64,
}

/// Mean and `[q(alpha/2), q(1 - alpha/2)]` quantile interval.
pub fn summarize_bootstrap(scores: &[f64], alpha: f64) -> Result<BootstrapSummary> {
    if scores.is_empty() {
        return Err(Error::arg("cannot summarize an empty score list"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::arg(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let n = scores.len() as f64;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, std) = if sorted[0] == sorted[sorted.len() - 1] {
        (sorted[0], 0.0)
    } else {
        let rough = scores.iter().sum::<f64>() / n;
        // second pass removes most of the summation error
        let mean = rough + scores.iter().map(|s| s - rough).sum::<f64>() / n;
        (mean, (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt())
    };
    let ci_low = quantile_sorted(&sorted, alpha / 2.0);
    let ci_high = quantile_sorted(&sorted, 1.0 - alpha / 2.0);
    Ok(BootstrapSummary {
        scores: scores.to_vec(),
        mean,
        std,
        ci_low,
        ci_high,
        length: ci_high - ci_low,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::arg(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Component labels (0 = background, 1.. = components in raster-scan order of
/// their first pixel) and the component count.
pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in conn.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Number of maximal connected foreground regions.
pub fn count_instances(mask: &BinaryMask, conn: Connectivity) -> usize {
    label_components(mask, conn).1
}

/// Percentage of region-of-interest pixels that are foreground. Without an
/// roi the whole frame is used.
pub fn porosity_pct(mask: &BinaryMask, roi: Option<&BinaryMask>) -> Result<f64> {
    match roi {
        None => {
            let total = mask.width() * mask.height();
            if total == 0 {
                return Err(Error::arg("mask has no pixels"));
            }
            Ok(100.0 * mask.count() as f64 / total as f64)
        }
        Some(roi) => {
            if !roi.same_shape(mask) {
                return Err(Error::arg("roi and mask sizes differ"));
            }
            let area = roi.count();
            if area == 0 {
                return Err(Error::arg("roi is empty"));
            }
            let inside = mask
                .data()
                .iter()
                .zip(roi.data())
                .filter(|(&m, &r)| m && r)
                .count();
            Ok(100.0 * inside as f64 / area as f64)
        }
    }
}

/// One image entering the bootstrap evaluation.
#[derive(Debug, Clone)]
pub struct BootstrapItem {
    pub id: String,
    pub image: GrayImage,
    /// Reference mask to score against; `None` skips the image.
    pub reference: Option<BinaryMask>,
    /// Index into the record list of the centroid to prompt from.
    pub record: usize,
}

#[derive(Debug, Clone)]
pub struct BootstrapParams {
    pub prompt_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub thresh: f64,
    pub filter_k: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBootstrap {
    pub id: String,
    pub summary: BootstrapSummary,
    /// How often each mask index was selected.
    pub chosen: [usize; 3],
}

/// Mean and spread across images, in the layout of a per-sample results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapAggregate {
    pub images: usize,
    pub skipped: usize,
    pub mean_dsc: f64,
    pub std_dsc: f64,
    pub ci_length_mean: f64,
    pub ci_length_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub per_image: Vec<ImageBootstrap>,
    pub skipped: Vec<String>,
    pub aggregate: BootstrapAggregate,
}

/// Seed for the image at position `index`: SplitMix64 of `seed + index`.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `iterations` with-replacement prompt draws on one image and summarize
/// the resulting Dice scores.
pub fn bootstrap_image(
    image: &GrayImage,
    reference: &BinaryMask,
    record: &CentroidRecord,
    backend: &mut dyn crate::backend::SegmentationBackend,
    params: &BootstrapParams,
    seed: u64,
) -> Result<(BootstrapSummary, [usize; 3])> {
    let filtered = median_filter(image, params.filter_k)?;
    let input = to_model_input(&filtered);
    let mut scores = Vec::with_capacity(params.iterations);
    let mut chosen = [0usize; 3];
    for i in 0..params.iterations {
        let prompts = bootstrap_prompt(record, params.prompt_size, seed, i)?;
        let out = segment_with_prompts(&input, &prompts, backend, params.thresh)?;
        chosen[out.chosen_index] += 1;
        scores.push(dsc(&out.mask, reference)?);
    }
    Ok((summarize_bootstrap(&scores, params.alpha)?, chosen))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Combine per-image results (sorted by id) into the aggregate row.
pub fn aggregate_bootstrap(mut per_image: Vec<ImageBootstrap>, mut skipped: Vec<String>) -> BootstrapReport {
    per_image.sort_by(|a, b| a.id.cmp(&b.id));
    skipped.sort();
    let means: Vec<f64> = per_image.iter().map(|r| r.summary.mean).collect();
    let lengths: Vec<f64> = per_image.iter().map(|r| r.summary.length).collect();
    let (mean_dsc, std_dsc) = mean_std(&means);
    let (ci_length_mean, ci_length_std) = mean_std(&lengths);
    BootstrapReport {
        aggregate: BootstrapAggregate {
            images: per_image.len(),
            skipped: skipped.len(),
            mean_dsc,
            std_dsc,
            ci_length_mean,
            ci_length_std,
        },
        per_image,
        skipped,
    }
}

/// Bootstrap every item against its centroid record. Items without a
/// reference mask are skipped with a warning. Image `i` (input order) draws
/// its prompts with seed [`image_seed`]`(params.seed, i)`.
pub fn run_bootstrap_eval(
    items: &[BootstrapItem],
    records: &[CentroidRecord],
    provider: &mut dyn BackendProvider,
    params: &BootstrapParams,
) -> Result<BootstrapReport> {
    let mut per_image = Vec::new();
    let mut skipped = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let Some(reference) = &item.reference else {
            log::warn!("{}: no reference mask, skipping", item.id);
            skipped.push(item.id.clone());
            continue;
        };
        let record = records.get(item.record).ok_or_else(|| {
            Error::arg(format!("{}: record {} does not exist", item.id, item.record))
        })?;
        let backend = provider.backend_for(&item.id, reference)?;
        let (summary, chosen) = bootstrap_image(
            &item.image,
            reference,
            record,
            backend,
            params,
            image_seed(params.seed, index),
        )?;
        per_image.push(ImageBootstrap {
            id: item.id.clone(),
            summary,
            chosen,
        });
    }
    Ok(aggregate_bootstrap(per_image, skipped))
}
