//! Model-file backend for exported Segment-Anything-style graphs, run with
//! `tract`.
//!
//! Encoder: one input `[1, 3, 1024, 1024]` f32 (pixel-normalized with the
//! usual ImageNet-scale mean/std, padding left at 0), one output
//! `[1, C, H, W]` image embedding.
//!
//! Decoder: inputs, in this order, `image_embeddings`, `point_coords [1, N, 2]`,
//! `point_labels [1, N]`, `mask_input [1, 1, 256, 256]`, `has_mask_input [1]`,
//! `orig_im_size [2]`; outputs `masks [1, n, H', W']` logits and
//! `iou_predictions [1, n]`. `orig_im_size` is set to the model frame, so the
//! masks come back at `1024 x 1024` and are mapped to the original resolution
//! by [`triplet_from_logits`]. A padding point `(0, 0)` with label `-1` is
//! appended, as the exported decoder expects when no box is given.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tract_onnx::prelude::*;

use super::{triplet_from_logits, SegmentationBackend, SegmentationTriplet};
use crate::error::{Error, Result};
use crate::image::{ModelInput, ModelPrompts, MODEL_SIDE};

const PIXEL_MEAN: [f32; 3] = [123.675, 116.28, 103.53];
const PIXEL_STD: [f32; 3] = [58.395, 57.12, 57.375];
const DECODER_INPUTS: [&str; 6] = [
    "image_embeddings",
    "point_coords",
    "point_labels",
    "mask_input",
    "has_mask_input",
    "orig_im_size",
];

type Plan = Arc<TypedRunnableModel>;

pub struct SamOnnxBackend {
    encoder: Plan,
    decoder_path: PathBuf,
    /// Decoder plans specialised per prompt count.
    decoders: HashMap<usize, Plan>,
    embedding_shape: Vec<usize>,
    /// Last encoded frame and its embedding, so repeated prompts on one image
    /// skip the encoder.
    cache: Option<(Vec<u8>, Tensor)>,
}

fn backend_err(path: &Path, what: &str, e: impl std::fmt::Display) -> Error {
    Error::Backend(format!("{} ({what}): {e:#}", path.display()))
}

impl SamOnnxBackend {
    pub fn load(encoder: &Path, decoder: &Path) -> Result<Self> {
        let side = MODEL_SIDE;
        let model = tract_onnx::onnx()
            .model_for_path(encoder)
            .map_err(|e| backend_err(encoder, "load", e))?
            .with_input_fact(0, f32::fact([1, 3, side, side]).into())
            .map_err(|e| backend_err(encoder, "input shape [1, 3, 1024, 1024]", e))?;
        let typed = model
            .into_optimized()
            .map_err(|e| backend_err(encoder, "optimize", e))?;
        let embedding_shape = typed
            .output_fact(0)
            .ok()
            .and_then(|f| f.shape.as_concrete().map(|s| s.to_vec()))
            .ok_or_else(|| backend_err(encoder, "output", "embedding shape is not concrete"))?;
        let encoder_plan = typed
            .into_runnable()
            .map_err(|e| backend_err(encoder, "plan", e))?;

        let probe = tract_onnx::onnx()
            .model_for_path(decoder)
            .map_err(|e| backend_err(decoder, "load", e))?;
        let names: Vec<String> = probe
            .input_outlets()
            .map_err(|e| backend_err(decoder, "inputs", e))?
            .iter()
            .map(|o| probe.node(o.node).name.clone())
            .collect();
        if names != DECODER_INPUTS {
            return Err(Error::Backend(format!(
                "{}: decoder inputs are {names:?}, expected {DECODER_INPUTS:?}",
                decoder.display()
            )));
        }
        Ok(Self {
            encoder: encoder_plan,
            decoder_path: decoder.to_path_buf(),
            decoders: HashMap::new(),
            embedding_shape,
            cache: None,
        })
    }

    fn decoder(&mut self, points: usize) -> Result<Plan> {
        if let Some(p) = self.decoders.get(&points) {
            return Ok(p.clone());
        }
        let path = &self.decoder_path;
        let e = &self.embedding_shape;
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, f32::fact(e).into()))
            .and_then(|m| m.with_input_fact(1, f32::fact([1, points, 2]).into()))
            .and_then(|m| m.with_input_fact(2, f32::fact([1, points]).into()))
            .and_then(|m| m.with_input_fact(3, f32::fact([1, 1, 256, 256]).into()))
            .and_then(|m| m.with_input_fact(4, f32::fact([1]).into()))
            .and_then(|m| m.with_input_fact(5, f32::fact([2]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|err| {
                backend_err(
                    path,
                    &format!("decoder with embeddings {e:?} and {points} points"),
                    err,
                )
            })?;
        self.decoders.insert(points, plan.clone());
        Ok(plan)
    }

    fn embed(&mut self, input: &ModelInput) -> Result<Tensor> {
        if let Some((pixels, t)) = &self.cache {
            if pixels.as_slice() == input.pixels() {
                return Ok(t.clone());
            }
        }
        let plane = MODEL_SIDE * MODEL_SIDE;
        let (cw, ch) = (input.content_width(), input.content_height());
        let mut data = vec![0f32; 3 * plane];
        for c in 0..3 {
            let src = input.channel(c);
            for y in 0..ch {
                for x in 0..cw {
                    let i = y * MODEL_SIDE + x;
                    data[c * plane + i] = (src[i] as f32 - PIXEL_MEAN[c]) / PIXEL_STD[c];
                }
            }
        }
        let tensor = Tensor::from_shape(&[1, 3, MODEL_SIDE, MODEL_SIDE], &data)
            .map_err(|e| Error::Backend(format!("encoder input: {e:#}")))?;
        let out = self
            .encoder
            .run(tvec!(tensor.into()))
            .map_err(|e| Error::Backend(format!("encoder run: {e:#}")))?;
        let emb = out[0].clone().into_tensor();
        self.cache = Some((input.pixels().to_vec(), emb.clone()));
        Ok(emb)
    }
}

impl SegmentationBackend for SamOnnxBackend {
    fn predict(&mut self, input: &ModelInput, prompts: &ModelPrompts) -> Result<SegmentationTriplet> {
        if prompts.is_empty() {
            return Err(Error::arg("model backend needs at least one prompt"));
        }
        let emb = self.embed(input)?;
        let n = prompts.len() + 1;
        let mut coords = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for (p, &l) in prompts.points.iter().zip(&prompts.labels) {
            coords.extend([p[0] as f32, p[1] as f32]);
            labels.push(l as f32);
        }
        coords.extend([0.0, 0.0]);
        labels.push(-1.0);
        let shape_err = |e: TractError| Error::Backend(format!("decoder input: {e:#}"));
        let inputs: TVec<TValue> = tvec!(
            emb.into(),
            Tensor::from_shape(&[1, n, 2], &coords).map_err(shape_err)?.into(),
            Tensor::from_shape(&[1, n], &labels).map_err(shape_err)?.into(),
            Tensor::zero::<f32>(&[1, 1, 256, 256]).map_err(shape_err)?.into(),
            Tensor::from_shape(&[1], &[0f32]).map_err(shape_err)?.into(),
            Tensor::from_shape(&[2], &[MODEL_SIDE as f32, MODEL_SIDE as f32])
                .map_err(shape_err)?
                .into(),
        );
        let plan = self.decoder(n)?;
        let out = plan
            .run(inputs)
            .map_err(|e| Error::Backend(format!("{}: decoder run: {e:#}", self.decoder_path.display())))?;
        if out.len() < 2 {
            return Err(Error::Backend(format!(
                "decoder returned {} outputs, expected masks and iou_predictions",
                out.len()
            )));
        }
        let masks = out[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| Error::Backend(format!("masks output: {e:#}")))?;
        let scores = out[1]
            .to_plain_array_view::<f32>()
            .map_err(|e| Error::Backend(format!("iou output: {e:#}")))?;
        let mshape = masks.shape().to_vec();
        if mshape.len() != 4 || mshape[2] != MODEL_SIDE || mshape[3] != MODEL_SIDE {
            return Err(Error::Backend(format!(
                "masks output has shape {mshape:?}, expected [1, n, {MODEL_SIDE}, {MODEL_SIDE}]"
            )));
        }
        let logits: Vec<f32> = masks.iter().copied().collect();
        let scores: Vec<f32> = scores.iter().copied().collect();
        triplet_from_logits(&logits, &scores, input)
    }
}
