//! Promptable segmentation backends and the mask-selection rule.
//!
//! A backend returns three candidate masks (subpart, part, whole object) with
//! predicted-IoU scores, ordered by ascending score rank. [`select_mask`]
//! keeps the part mask unless its score exceeds the threshold, in which case
//! the part mask is taken to cover the whole object and the subpart mask is
//! used instead.

mod oracle;
#[cfg(feature = "onnx")]
mod sam;
mod logits;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use logits::triplet_from_logits;
pub use oracle::{make_oracle, OracleBackend, OracleProvider};
#[cfg(feature = "onnx")]
pub use sam::SamOnnxBackend;

use crate::cluster::CentroidRecord;
use crate::error::{Error, Result};
use crate::image::{median_filter, to_model_input, transform_coords, BinaryMask, GrayImage, ModelInput, ModelPrompts};
use crate::prompt::{generate_prompts, PromptSet};

pub const DEFAULT_THRESH: f64 = 0.90;

/// Three candidate masks at original resolution with their predicted IoU.
/// Index 0 = subpart, 1 = part, 2 = whole.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationTriplet {
    masks: [BinaryMask; 3],
    scores: [f64; 3],
}

impl SegmentationTriplet {
    pub fn new(masks: [BinaryMask; 3], scores: [f64; 3]) -> Result<Self> {
        if !(masks[0].same_shape(&masks[1]) && masks[1].same_shape(&masks[2])) {
            return Err(Error::Backend("triplet masks differ in size".into()));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Backend(format!("predicted IoU {s} outside [0, 1]")));
        }
        Ok(Self { masks, scores })
    }

    pub fn masks(&self) -> &[BinaryMask; 3] {
        &self.masks
    }

    pub fn scores(&self) -> [f64; 3] {
        self.scores
    }
}

/// Index picked by the selection rule: 1 (part) unless `scores[1] > thresh`,
/// then 0 (subpart).
pub fn select_index(scores: [f64; 3], thresh: f64) -> usize {
    if scores[1] > thresh {
        0
    } else {
        1
    }
}

pub fn select_mask(triplet: SegmentationTriplet, thresh: f64) -> (BinaryMask, usize) {
    let i = select_index(triplet.scores, thresh);
    let [m0, m1, _] = triplet.masks;
    (if i == 0 { m0 } else { m1 }, i)
}

/// A promptable segmentation model.
pub trait SegmentationBackend {
    /// `prompts` must already be in the model frame of `input`.
    fn predict(&mut self, input: &ModelInput, prompts: &ModelPrompts) -> Result<SegmentationTriplet>;
}

/// Hands out the backend to use for a given image. Oracle backends are
/// image-specific; model backends return the same instance every time.
pub trait BackendProvider {
    fn backend_for(
        &mut self,
        image_id: &str,
        reference: &BinaryMask,
    ) -> Result<&mut dyn SegmentationBackend>;
}

/// Provider that serves one backend for every image.
pub struct SharedBackend<B>(pub B);

impl<B: SegmentationBackend> BackendProvider for SharedBackend<B> {
    fn backend_for(&mut self, _: &str, _: &BinaryMask) -> Result<&mut dyn SegmentationBackend> {
        Ok(&mut self.0)
    }
}

/// How to build a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendDescriptor {
    /// Ground-truth oracle with fixed predicted-IoU scores.
    Oracle { scores: [f64; 3] },
    /// Exported encoder and prompt/mask-decoder graphs.
    ModelFile {
        encoder: PathBuf,
        decoder: PathBuf,
        threads: Option<usize>,
    },
}

impl BackendDescriptor {
    /// Model-file descriptor for a directory holding `encoder.onnx` and
    /// `decoder.onnx`.
    pub fn model_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        BackendDescriptor::ModelFile {
            encoder: dir.join("encoder.onnx"),
            decoder: dir.join("decoder.onnx"),
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackendDescriptor::Oracle { scores } => {
                if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                    return Err(Error::arg(format!("oracle scores {scores:?} outside [0, 1]")));
                }
                Ok(())
            }
            BackendDescriptor::ModelFile { encoder, decoder, .. } => {
                for p in [encoder, decoder] {
                    if !p.is_file() {
                        return Err(Error::Backend(format!("model file {} not found", p.display())));
                    }
                    if p.extension().and_then(|e| e.to_str()) != Some("onnx") {
                        return Err(Error::Backend(format!(
                            "model file {} is not an .onnx graph",
                            p.display()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Build a provider for this descriptor.
    pub fn provider(&self) -> Result<Box<dyn BackendProvider + Send>> {
        self.validate()?;
        match self {
            BackendDescriptor::Oracle { scores } => Ok(Box::new(OracleProvider::new(*scores))),
            #[cfg(feature = "onnx")]
            BackendDescriptor::ModelFile { encoder, decoder, threads } => {
                let _ = threads;
                Ok(Box::new(SharedBackend(SamOnnxBackend::load(encoder, decoder)?)))
            }
            #[cfg(not(feature = "onnx"))]
            BackendDescriptor::ModelFile { .. } => Err(Error::Backend(
                "model-file backend requires the `onnx` feature".into(),
            )),
        }
    }
}

/// Final mask for one image plus what the backend reported.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub mask: BinaryMask,
    pub chosen_index: usize,
    pub scores: [f64; 3],
    pub prompts: usize,
}

/// Transform prompts into the model frame, predict and select.
pub fn segment_with_prompts(
    input: &ModelInput,
    prompts: &PromptSet,
    backend: &mut dyn SegmentationBackend,
    thresh: f64,
) -> Result<SegmentOutcome> {
    if prompts.is_empty() {
        return Err(Error::arg("at least one prompt point is required"));
    }
    let model_prompts = transform_coords(prompts, input)?;
    let triplet = backend.predict(input, &model_prompts)?;
    let scores = triplet.scores();
    let (mask, chosen_index) = select_mask(triplet, thresh);
    Ok(SegmentOutcome {
        mask,
        chosen_index,
        scores,
        prompts: prompts.len(),
    })
}

/// Denoise, resample into the model frame, prompt from `record`, predict and
/// select. The returned mask is at the image's original resolution.
pub fn segment_image(
    img: &GrayImage,
    record: &CentroidRecord,
    prompt_size: usize,
    seed: u64,
    backend: &mut dyn SegmentationBackend,
    thresh: f64,
    filter_k: usize,
) -> Result<SegmentOutcome> {
    if (record.image.width(), record.image.height()) != (img.width(), img.height()) {
        return Err(Error::arg(format!(
            "centroid {} is {}x{} but image is {}x{}",
            record.cluster_index,
            record.image.width(),
            record.image.height(),
            img.width(),
            img.height()
        )));
    }
    let filtered = median_filter(img, filter_k)?;
    let input = to_model_input(&filtered);
    let prompts = generate_prompts(record, prompt_size, seed)?;
    segment_with_prompts(&input, &prompts, backend, thresh)
}
