use super::SegmentationTriplet;
use crate::error::{Error, Result};
use crate::image::{ModelInput, MODEL_SIDE};

/// Turn raw decoder output into a rank-ordered triplet.
///
/// `logits` is `[n, MODEL_SIDE, MODEL_SIDE]` row-major and `scores` holds the
/// `n` predicted IoUs. With four outputs the first (single-mask token) is
/// dropped. Masks are cut at logit `> 0`, reordered by ascending score, and
/// mapped back to the original resolution; scores are clamped to `[0, 1]`.
pub fn triplet_from_logits(
    logits: &[f32],
    scores: &[f32],
    input: &ModelInput,
) -> Result<SegmentationTriplet> {
    let plane = MODEL_SIDE * MODEL_SIDE;
    let n = scores.len();
    if logits.len() != n * plane {
        return Err(Error::Backend(format!(
            "mask logits have {} values, expected {n} x {MODEL_SIDE} x {MODEL_SIDE}",
            logits.len()
        )));
    }
    let first = match n {
        3 => 0,
        4 => 1,
        other => {
            return Err(Error::Backend(format!(
                "decoder returned {other} masks, expected 3 or 4"
            )))
        }
    };
    let mut order: Vec<usize> = (first..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut masks = Vec::with_capacity(3);
    let mut out_scores = [0.0; 3];
    for (slot, &i) in order.iter().enumerate() {
        let bits: Vec<bool> = logits[i * plane..(i + 1) * plane]
            .iter()
            .map(|&v| v > 0.0)
            .collect();
        masks.push(input.mask_to_original(&bits)?);
        out_scores[slot] = (scores[i] as f64).clamp(0.0, 1.0);
    }
    let masks: [_; 3] = masks.try_into().expect("three masks");
    SegmentationTriplet::new(masks, out_scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{to_model_input, GrayImage};

    fn plane(f: impl Fn(usize, usize) -> f32) -> Vec<f32> {
        let mut v = Vec::with_capacity(MODEL_SIDE * MODEL_SIDE);
        for y in 0..MODEL_SIDE {
            for x in 0..MODEL_SIDE {
                v.push(f(x, y));
            }
        }
        v
    }

    #[test]
    fn sorts_by_score_and_drops_single_mask_token() {
        let input = to_model_input(&GrayImage::filled(512, 256, 0).unwrap());
        // mask k covers columns < 256 * (k + 1) in model frame
        let mut logits = Vec::new();
        for k in 0..4 {
            logits.extend(plane(|x, _| if x < 256 * (k + 1) { 1.0 } else { -1.0 }));
        }
        let scores = [0.99, 0.95, 0.40, 1.02];
        let t = triplet_from_logits(&logits, &scores, &input).unwrap();
        assert_eq!(t.scores(), [0.40f32 as f64, 0.95f32 as f64, 1.0]);
        // original is 512 wide at scale 2: model column 256 * (k + 1) -> 128 * (k + 1)
        assert_eq!(t.masks()[0].count(), 384 * 256); // raw index 2
        assert_eq!(t.masks()[1].count(), 256 * 256); // raw index 1
        assert_eq!(t.masks()[2].count(), 512 * 256); // raw index 3
    }

    #[test]
    fn shape_errors_name_the_problem() {
        let input = to_model_input(&GrayImage::filled(4, 4, 0).unwrap());
        let err = triplet_from_logits(&[0.0; 10], &[0.1, 0.2, 0.3], &input).unwrap_err();
        assert!(err.to_string().contains("mask logits"));
        let logits = vec![0.0; 2 * MODEL_SIDE * MODEL_SIDE];
        let err = triplet_from_logits(&logits, &[0.1, 0.2], &input).unwrap_err();
        assert!(err.to_string().contains("2 masks"));
    }

    #[test]
    fn padding_logits_are_ignored() {
        let input = to_model_input(&GrayImage::filled(100, 50, 0).unwrap());
        let mut logits = Vec::new();
        for _ in 0..3 {
            logits.extend(plane(|_, y| if y >= 512 { 5.0 } else { -5.0 }));
        }
        let t = triplet_from_logits(&logits, &[0.1, 0.2, 0.3], &input).unwrap();
        assert!(t.masks().iter().all(|m| m.is_empty()));
    }
}
