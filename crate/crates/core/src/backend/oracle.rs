//! Ground-truth oracle backend.
//!
//! * mask 0: union of ground-truth components (8-connected) hit by a prompt
//! * mask 1: the full ground truth
//! * mask 2: the filled convex hull of the ground-truth support
//!
//! Scores are fixed at construction. With a part score at or below the
//! selection threshold the oracle is prompt-insensitive (mask 1 is always
//! chosen); above it, only prompted components come back.

use super::{BackendProvider, SegmentationBackend, SegmentationTriplet};
use crate::error::{Error, Result};
use crate::eval::{label_components, Connectivity};
use crate::image::{BinaryMask, ModelInput, ModelPrompts};

#[derive(Debug, Clone)]
pub struct OracleBackend {
    gt: BinaryMask,
    labels: Vec<u32>,
    components: usize,
    hull: BinaryMask,
    scores: [f64; 3],
}

/// Build an oracle around a ground-truth mask.
pub fn make_oracle(gt: BinaryMask, scores: [f64; 3]) -> Result<OracleBackend> {
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::arg(format!("oracle scores {scores:?} outside [0, 1]")));
    }
    let (labels, components) = label_components(&gt, Connectivity::Eight);
    let hull = filled_hull(&gt);
    Ok(OracleBackend {
        gt,
        labels,
        components,
        hull,
        scores,
    })
}

impl OracleBackend {
    pub fn scores(&self) -> [f64; 3] {
        self.scores
    }
}

impl SegmentationBackend for OracleBackend {
    fn predict(&mut self, input: &ModelInput, prompts: &ModelPrompts) -> Result<SegmentationTriplet> {
        if prompts.is_empty() {
            return Err(Error::arg("oracle needs at least one prompt"));
        }
        let (w, h) = (self.gt.width(), self.gt.height());
        if (input.orig_width, input.orig_height) != (w, h) {
            return Err(Error::Backend(format!(
                "oracle ground truth is {w}x{h} but input is {}x{}",
                input.orig_width, input.orig_height
            )));
        }
        let mut hit = vec![false; self.components + 1];
        for &[mx, my] in &prompts.points {
            let (x, y) = input.to_original(mx, my);
            hit[self.labels[y * w + x] as usize] = true;
        }
        hit[0] = false;
        let sub = self.labels.iter().map(|&l| hit[l as usize]).collect();
        let sub = BinaryMask::new(w, h, sub)?;
        SegmentationTriplet::new([sub, self.gt.clone(), self.hull.clone()], self.scores)
    }
}

/// Builds an oracle from each image's reference mask.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    scores: [f64; 3],
    current: Option<OracleBackend>,
}

impl OracleProvider {
    pub fn new(scores: [f64; 3]) -> Self {
        Self {
            scores,
            current: None,
        }
    }
}

impl BackendProvider for OracleProvider {
    fn backend_for(
        &mut self,
        _image_id: &str,
        reference: &BinaryMask,
    ) -> Result<&mut dyn SegmentationBackend> {
        let oracle = make_oracle(reference.clone(), self.scores)?;
        Ok(self.current.insert(oracle))
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (monotone chain), counter-clockwise, no collinear points.
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Every pixel whose center lies inside or on the convex hull of the mask's
/// foreground.
fn filled_hull(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    // only boundary pixels of each row can be hull vertices
    let mut pts = Vec::new();
    for y in 0..h {
        let row = &mask.data()[y * w..(y + 1) * w];
        if let (Some(a), Some(b)) = (row.iter().position(|&v| v), row.iter().rposition(|&v| v)) {
            pts.push((a as i64, y as i64));
            pts.push((b as i64, y as i64));
        }
    }
    let mut out = BinaryMask::empty(w, h);
    let hull = convex_hull(pts);
    match hull.len() {
        0 => {}
        1 | 2 => {
            // point or segment
            let (a, b) = (hull[0], *hull.last().unwrap());
            for y in a.1.min(b.1)..=a.1.max(b.1) {
                for x in a.0.min(b.0)..=a.0.max(b.0) {
                    if cross(a, b, (x, y)) == 0 {
                        out.set(x as usize, y as usize, true);
                    }
                }
            }
        }
        _ => {
            let (ymin, ymax) = (
                hull.iter().map(|p| p.1).min().unwrap(),
                hull.iter().map(|p| p.1).max().unwrap(),
            );
            let (xmin, xmax) = (
                hull.iter().map(|p| p.0).min().unwrap(),
                hull.iter().map(|p| p.0).max().unwrap(),
            );
            for y in ymin..=ymax {
                for x in xmin..=xmax {
                    let inside = (0..hull.len())
                        .all(|i| cross(hull[i], hull[(i + 1) % hull.len()], (x, y)) >= 0);
                    if inside {
                        out.set(x as usize, y as usize, true);
                    }
                }
            }
        }
    }
    out
}
