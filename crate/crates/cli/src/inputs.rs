//! Input discovery and the per-image state shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::warn;
use poreseg::cluster::{
    kmeans_images, kmedoids_images, nearest_record, CentroidRecord, CentroidStore, ClusterModel,
    ImageVector, Method,
};
use poreseg::image::{load_gray, load_mask};
use poreseg::threshold::{make_reference_mask, ThresholdParams};
use poreseg::{BinaryMask, GrayImage};

use crate::config::PipelineConfig;

/// PNG files under `input`, sorted by file name (layer order). `input` is a
/// directory or a glob pattern.
pub fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = if input.is_dir() {
        std::fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            })
            .collect()
    } else {
        let pattern = input.to_string_lossy();
        glob::glob(&pattern)
            .with_context(|| format!("bad input pattern {pattern}"))?
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect()
    };
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then_with(|| a.cmp(b)));
    if files.is_empty() {
        bail!("no PNG images found at {}", input.display());
    }
    Ok(files)
}

/// Image id: the file stem.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// One input image that loaded successfully.
pub struct Layer {
    pub id: String,
    pub path: PathBuf,
    pub image: GrayImage,
}

/// An input that could not be used, with the reason.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Skip {
    pub id: String,
    pub reason: String,
}

/// Load every input; unreadable files become skip records.
pub fn load_layers(config: &PipelineConfig) -> Result<(Vec<Layer>, Vec<Skip>)> {
    let input = config
        .input
        .as_deref()
        .context("no input (set --input or `input` in the config)")?;
    let mut layers = Vec::new();
    let mut skipped = Vec::new();
    for path in list_inputs(input)? {
        let id = image_id(&path);
        match load_gray(&path) {
            Ok(image) => layers.push(Layer { id, path, image }),
            Err(e) => {
                warn!("{id}: {e}");
                skipped.push(Skip {
                    id,
                    reason: e.to_string(),
                })
            }
        }
    }
    if let Some(first) = layers.first() {
        let (w, h) = (first.image.width(), first.image.height());
        let mut kept = Vec::with_capacity(layers.len());
        for l in layers {
            if (l.image.width(), l.image.height()) == (w, h) {
                kept.push(l);
            } else {
                let reason = format!(
                    "size {}x{} differs from the batch size {w}x{h}",
                    l.image.width(),
                    l.image.height()
                );
                warn!("{}: {reason}", l.id);
                skipped.push(Skip { id: l.id, reason });
            }
        }
        layers = kept;
    }
    Ok((layers, skipped))
}

/// Reference mask for a layer: `<gt_dir>/<id>.png` when a ground-truth
/// directory is configured, otherwise the thresholding reference.
pub fn reference_for(
    layer: &Layer,
    gt_dir: Option<&Path>,
    params: &ThresholdParams,
) -> Result<BinaryMask, String> {
    match gt_dir {
        Some(dir) => {
            let path = dir.join(format!("{}.png", layer.id));
            let m = load_mask(&path).map_err(|e| e.to_string())?;
            if (m.width(), m.height()) != (layer.image.width(), layer.image.height()) {
                return Err(format!(
                    "reference {} is {}x{}, image is {}x{}",
                    path.display(),
                    m.width(),
                    m.height(),
                    layer.image.width(),
                    layer.image.height()
                ));
            }
            Ok(m)
        }
        None => make_reference_mask(&layer.image, params)
            .map(|r| r.mask)
            .map_err(|e| e.to_string()),
    }
}

/// Cluster the layers with the configured method.
pub fn cluster_layers(layers: &[Layer], config: &PipelineConfig) -> Result<ClusterModel> {
    let vectors: Vec<ImageVector> = layers
        .iter()
        .map(|l| ImageVector::from_image(l.id.clone(), &l.image))
        .collect();
    let model = match config.cluster.method {
        Method::Kmeans => kmeans_images(&vectors, &config.kmeans_params())?,
        Method::Kmedoids => kmedoids_images(&vectors, &config.kmedoids_params())?,
    };
    Ok(model)
}

/// Where each layer takes its prompts from.
pub struct Prompting {
    pub records: Vec<CentroidRecord>,
    /// Record index per layer, or the reason the layer has none.
    pub assignment: Vec<Result<usize, String>>,
    pub store_dir: PathBuf,
    pub reused: bool,
}

/// Fresh mode clusters the layers and saves the store under
/// `<output>/store`; reuse mode loads `store` and assigns each layer to its
/// nearest stored centroid.
pub fn prepare_prompting(
    layers: &[Layer],
    config: &PipelineConfig,
    store: Option<&Path>,
) -> Result<Prompting> {
    let out = config.output_dir()?;
    match store {
        Some(dir) => {
            if !dir.join("store.json").is_file() {
                bail!("centroid store {} not found", dir.display());
            }
            let store = CentroidStore::load(dir)?;
            let assignment = layers
                .iter()
                .map(|l| {
                    nearest_record(&store.records, &l.image)
                        .ok_or_else(|| "no usable stored centroid matches this image".to_string())
                })
                .collect();
            Ok(Prompting {
                records: store.records,
                assignment,
                store_dir: dir.to_path_buf(),
                reused: true,
            })
        }
        None => {
            if layers.len() < config.cluster.k {
                bail!(
                    "{} usable images but k = {}; lower --k or add images",
                    layers.len(),
                    config.cluster.k
                );
            }
            let model = cluster_layers(layers, config)?;
            let store = CentroidStore::from_model(&model, config.threshold_params()?);
            let store_dir = out.join("store");
            store.save(&store_dir)?;
            let assignment = layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let own = model.assignments[i];
                    if store.records[own].usable() {
                        Ok(own)
                    } else {
                        warn!("{}: centroid {own} has no foreground, using the nearest usable one", l.id);
                        nearest_record(&store.records, &l.image)
                            .ok_or_else(|| "no centroid has foreground pixels".to_string())
                    }
                })
                .collect();
            Ok(Prompting {
                records: store.records,
                assignment,
                store_dir,
                reused: false,
            })
        }
    }
}

/// Split `0..n` into at most `jobs` contiguous chunks.
pub fn chunks(n: usize, jobs: usize) -> Vec<std::ops::Range<usize>> {
    let jobs = jobs.clamp(1, n.max(1));
    let size = n.div_ceil(jobs);
    (0..n).step_by(size.max(1)).map(|s| s..(s + size).min(n)).collect()
}
