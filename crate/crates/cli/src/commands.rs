use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use poreseg::backend::{segment_image, BackendDescriptor, BackendProvider};
use poreseg::cluster::CentroidStore;
use poreseg::eval::{
    aggregate_bootstrap, bootstrap_image, count_instances, dsc, image_seed, porosity_pct,
    BootstrapParams, ImageBootstrap,
};
use poreseg::image::{load_mask, save_gray, save_mask};
use poreseg::synth::{generate_stack, Drift, Intensities, Noise, PoreCount, SyntheticSpec};
use poreseg::threshold::make_reference_mask;
use poreseg::BinaryMask;
use serde::Serialize;

use crate::config::{BackendKind, Overrides, PipelineConfig};
use crate::inputs::{
    chunks, cluster_layers, image_id, list_inputs, load_layers, prepare_prompting, reference_for,
    Layer, Prompting,
};
use crate::report::{
    mean_std, timestamp, write_bootstrap_csv, write_json, EvalRow, ImageRecord, RunManifest,
    StoreInfo,
};
use crate::Status;

fn setup(o: &Overrides) -> Result<(PipelineConfig, PathBuf)> {
    let config = PipelineConfig::resolve(o)?;
    config.validate()?;
    let out = config.output_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((config, out))
}

/// Run `work` over contiguous index ranges on up to `jobs` threads and
/// concatenate the results in index order.
fn in_parallel<T: Send>(
    n: usize,
    jobs: usize,
    work: impl Fn(Range<usize>) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let ranges = chunks(n, jobs);
    if ranges.len() <= 1 {
        return ranges.into_iter().map(&work).try_fold(Vec::new(), |mut acc, r| {
            acc.extend(r?);
            Ok(acc)
        });
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = ranges.into_iter().map(|r| s.spawn(|| work(r))).collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

pub fn refs(o: &Overrides) -> Result<Status> {
    let started = timestamp();
    let (config, out) = setup(o)?;
    let params = config.threshold_params()?;
    let (layers, skipped) = load_layers(&config)?;
    let mut manifest = RunManifest::new("refs", &config, started);
    manifest
        .images
        .extend(skipped.into_iter().map(|s| ImageRecord::skipped(s.id, s.reason)));
    let results = in_parallel(layers.len(), config.jobs, |range| {
        let mut recs = Vec::new();
        for l in &layers[range] {
            let rec = match make_reference_mask(&l.image, &params) {
                Ok(r) => {
                    save_mask(&r.mask, out.join(format!("{}.png", l.id)))?;
                    write_json(&out.join(format!("{}.json", l.id)), &r.sidecar(&params))?;
                    ImageRecord {
                        id: l.id.clone(),
                        ..ImageRecord::default()
                    }
                }
                Err(e) => {
                    warn!("{}: {e}", l.id);
                    ImageRecord::skipped(l.id.clone(), e.to_string())
                }
            };
            recs.push(rec);
        }
        Ok(recs)
    })?;
    manifest.images.extend(results);
    let skips = manifest.skipped();
    println!(
        "reference masks: {} written, {skips} skipped",
        manifest.images.len() - skips
    );
    manifest.write(&out)?;
    Ok(Status::from_skips(skips))
}

#[derive(Serialize)]
struct ClusterSummary<'a> {
    method: String,
    distance: String,
    k: usize,
    seed: u64,
    objective: f64,
    objective_trace: &'a [f64],
    sizes: Vec<usize>,
    medoids: Option<Vec<&'a str>>,
    assignments: Vec<(&'a str, usize)>,
    usable: Vec<bool>,
}

pub fn cluster(o: &Overrides) -> Result<Status> {
    let started = timestamp();
    let (config, out) = setup(o)?;
    let (layers, skipped) = load_layers(&config)?;
    if layers.len() < config.cluster.k {
        bail!(
            "{} usable images but k = {}; lower --k or add images",
            layers.len(),
            config.cluster.k
        );
    }
    let model = cluster_layers(&layers, &config)?;
    let store = CentroidStore::from_model(&model, config.threshold_params()?);
    store.save(&out)?;

    let sizes = model.cluster_sizes();
    let medoids = model
        .medoids
        .as_ref()
        .map(|m| m.iter().map(|&i| model.ids[i].as_str()).collect::<Vec<_>>());
    println!(
        "{} / {}: objective {} over {} images, cluster sizes {:?}",
        model.method,
        model.distance,
        model.objective,
        layers.len(),
        sizes
    );
    if let Some(m) = &medoids {
        println!("medoids: {}", m.join(", "));
    }
    let summary = ClusterSummary {
        method: model.method.to_string(),
        distance: model.distance.to_string(),
        k: model.k,
        seed: model.seed,
        objective: model.objective,
        objective_trace: &model.objective_trace,
        sizes: sizes.clone(),
        medoids,
        assignments: model
            .ids
            .iter()
            .map(String::as_str)
            .zip(model.assignments.iter().copied())
            .collect(),
        usable: store.records.iter().map(|r| r.usable()).collect(),
    };
    write_json(&out.join("cluster.json"), &summary)?;

    let mut manifest = RunManifest::new("cluster", &config, started);
    manifest.store = Some(StoreInfo {
        dir: out.display().to_string(),
        reused: false,
    });
    manifest
        .images
        .extend(skipped.into_iter().map(|s| ImageRecord::skipped(s.id, s.reason)));
    manifest.images.extend(layers.iter().enumerate().map(|(i, l)| ImageRecord {
        id: l.id.clone(),
        record: Some(model.assignments[i]),
        ..ImageRecord::default()
    }));
    manifest.aggregate = serde_json::json!({
        "images": layers.len(),
        "objective": model.objective,
        "sizes": sizes,
    });
    let skips = manifest.skipped();
    manifest.write(&out)?;
    Ok(Status::from_skips(skips))
}

/// References, keyed by layer position. Oracle runs need one per image; model
/// runs only use it for scoring.
fn references(layers: &[Layer], config: &PipelineConfig) -> Result<Vec<Result<BinaryMask, String>>> {
    let params = config.threshold_params()?;
    let gt = config.eval.gt_dir.as_deref();
    in_parallel(layers.len(), config.jobs, |range| {
        Ok(layers[range]
            .iter()
            .map(|l| reference_for(l, gt, &params))
            .collect())
    })
}

fn provider(descriptor: &BackendDescriptor) -> Result<Box<dyn BackendProvider + Send>> {
    descriptor
        .provider()
        .context("creating segmentation backend")
}

#[derive(Serialize)]
struct MaskMeta<'a> {
    id: &'a str,
    record: usize,
    chosen_index: usize,
    scores: [f64; 3],
    prompts: usize,
    dsc: Option<f64>,
    seconds: f64,
}

pub fn segment(o: &Overrides, store: Option<&Path>) -> Result<Status> {
    let started = timestamp();
    let (config, out) = setup(o)?;
    let descriptor = config.backend_descriptor()?;
    let (layers, skipped) = load_layers(&config)?;
    let refs = references(&layers, &config)?;
    let prompting = prepare_prompting(&layers, &config, store)?;
    let oracle = config.backend.kind == BackendKind::Oracle;

    let results = in_parallel(layers.len(), config.jobs, |range| {
        let mut provider = provider(&descriptor)?;
        let mut recs = Vec::new();
        for i in range {
            recs.push(segment_layer(
                i,
                &layers[i],
                &refs[i],
                &prompting,
                provider.as_mut(),
                &config,
                oracle,
                &out,
            )?);
        }
        Ok(recs)
    })?;

    let dscs: Vec<f64> = results.iter().filter_map(|r| r.dsc).collect();
    let secs: Vec<f64> = results.iter().filter_map(|r| r.seconds).collect();
    let mut chosen = [0usize; 3];
    for r in &results {
        if let Some(c) = r.chosen_index {
            chosen[c] += 1;
        }
    }
    let mut manifest = RunManifest::new("segment", &config, started);
    manifest.store = Some(StoreInfo {
        dir: prompting.store_dir.display().to_string(),
        reused: prompting.reused,
    });
    manifest
        .images
        .extend(skipped.into_iter().map(|s| ImageRecord::skipped(s.id, s.reason)));
    manifest.images.extend(results);
    let processed = manifest.images.len() - manifest.skipped();
    let (mean_dsc, std_dsc) = mean_std(&dscs).unzip();
    let mean_seconds = mean_std(&secs).map(|m| m.0);
    manifest.aggregate = serde_json::json!({
        "images": processed,
        "skipped": manifest.skipped(),
        "scored": dscs.len(),
        "mean_dsc": mean_dsc,
        "std_dsc": std_dsc,
        "mean_seconds": mean_seconds,
        "chosen": chosen,
    });
    match mean_dsc {
        Some(m) => println!(
            "segmented {processed} images ({} skipped), DSC {m:.4} ± {:.4}",
            manifest.skipped(),
            std_dsc.unwrap_or(0.0)
        ),
        None => println!("segmented {processed} images ({} skipped)", manifest.skipped()),
    }
    let skips = manifest.skipped();
    manifest.write(&out)?;
    Ok(Status::from_skips(skips))
}

#[allow(clippy::too_many_arguments)]
fn segment_layer(
    index: usize,
    layer: &Layer,
    reference: &Result<BinaryMask, String>,
    prompting: &Prompting,
    provider: &mut dyn BackendProvider,
    config: &PipelineConfig,
    oracle: bool,
    out: &Path,
) -> Result<ImageRecord> {
    let skip = |why: String| {
        warn!("{}: {why}", layer.id);
        Ok(ImageRecord::skipped(layer.id.clone(), why))
    };
    let record = match &prompting.assignment[index] {
        Ok(r) => *r,
        Err(e) => return skip(e.clone()),
    };
    let empty;
    let reference_mask = match reference {
        Ok(m) => m,
        Err(e) if oracle => return skip(format!("no reference for the oracle: {e}")),
        Err(_) => {
            empty = BinaryMask::empty(layer.image.width(), layer.image.height());
            &empty
        }
    };
    let backend = provider.backend_for(&layer.id, reference_mask)?;
    let start = Instant::now();
    let outcome = match segment_image(
        &layer.image,
        &prompting.records[record],
        config.prompt.size,
        image_seed(config.prompt.seed, index),
        backend,
        config.backend.thresh,
        config.threshold.filter_k,
    ) {
        Ok(o) => o,
        Err(e) => return skip(e.to_string()),
    };
    let seconds = start.elapsed().as_secs_f64();
    let score = match reference {
        Ok(m) => Some(dsc(&outcome.mask, m)?),
        Err(_) => None,
    };
    save_mask(&outcome.mask, out.join(format!("mask_{}.png", layer.id)))?;
    write_json(
        &out.join(format!("meta_{}.json", layer.id)),
        &MaskMeta {
            id: &layer.id,
            record,
            chosen_index: outcome.chosen_index,
            scores: outcome.scores,
            prompts: outcome.prompts,
            dsc: score,
            seconds,
        },
    )?;
    info!(
        "{}: mask {} (scores {:?}), {:.3}s",
        layer.id, outcome.chosen_index, outcome.scores, seconds
    );
    Ok(ImageRecord {
        id: layer.id.clone(),
        record: Some(record),
        chosen_index: Some(outcome.chosen_index),
        scores: Some(outcome.scores),
        dsc: score,
        prompts: Some(outcome.prompts),
        seconds: Some(seconds),
        ..ImageRecord::default()
    })
}

pub fn bootstrap(o: &Overrides, store: Option<&Path>) -> Result<Status> {
    let started = timestamp();
    let (config, out) = setup(o)?;
    let descriptor = config.backend_descriptor()?;
    let (layers, skipped) = load_layers(&config)?;
    let refs = references(&layers, &config)?;
    let prompting = prepare_prompting(&layers, &config, store)?;
    let params = BootstrapParams {
        prompt_size: config.bootstrap_prompt_size(),
        iterations: config.bootstrap.iterations,
        seed: config.bootstrap.seed,
        thresh: config.backend.thresh,
        filter_k: config.threshold.filter_k,
        alpha: config.eval.alpha,
    };

    let results = in_parallel(layers.len(), config.jobs, |range| {
        let mut provider = provider(&descriptor)?;
        let mut recs = Vec::new();
        for i in range {
            let l = &layers[i];
            let why = match (&refs[i], &prompting.assignment[i]) {
                (Err(e), _) => Some(format!("no reference: {e}")),
                (_, Err(e)) => Some(e.clone()),
                _ => None,
            };
            if let Some(why) = why {
                warn!("{}: {why}", l.id);
                recs.push(Err(ImageRecord::skipped(l.id.clone(), why)));
                continue;
            }
            let (reference, record) = (refs[i].as_ref().unwrap(), *prompting.assignment[i].as_ref().unwrap());
            let backend = provider.backend_for(&l.id, reference)?;
            let start = Instant::now();
            let seed = image_seed(params.seed, i);
            match bootstrap_image(&l.image, reference, &prompting.records[record], backend, &params, seed) {
                Ok((summary, chosen)) => {
                    let seconds = start.elapsed().as_secs_f64();
                    info!("{}: mean DSC {:.4}, CI length {:.4}", l.id, summary.mean, summary.length);
                    recs.push(Ok((
                        ImageBootstrap {
                            id: l.id.clone(),
                            summary,
                            chosen,
                        },
                        record,
                        seconds,
                    )))
                }
                Err(e) => recs.push(Err(ImageRecord::skipped(l.id.clone(), e.to_string()))),
            }
        }
        Ok(recs)
    })?;

    let mut manifest = RunManifest::new("bootstrap", &config, started);
    manifest.store = Some(StoreInfo {
        dir: prompting.store_dir.display().to_string(),
        reused: prompting.reused,
    });
    manifest
        .images
        .extend(skipped.into_iter().map(|s| ImageRecord::skipped(s.id, s.reason)));
    let mut per_image = Vec::new();
    for r in results {
        match r {
            Ok((b, record, seconds)) => {
                manifest.images.push(ImageRecord {
                    id: b.id.clone(),
                    record: Some(record),
                    dsc: Some(b.summary.mean),
                    prompts: Some(params.prompt_size),
                    seconds: Some(seconds),
                    ..ImageRecord::default()
                });
                per_image.push(b);
            }
            Err(rec) => manifest.images.push(rec),
        }
    }
    let skipped_ids = manifest
        .images
        .iter()
        .filter(|r| r.reason.is_some())
        .map(|r| r.id.clone())
        .collect();
    let report = aggregate_bootstrap(per_image, skipped_ids);
    write_bootstrap_csv(&out.join("bootstrap.csv"), &report)?;
    write_json(&out.join("bootstrap.json"), &report)?;
    manifest.aggregate = serde_json::to_value(&report.aggregate)?;
    let a = &report.aggregate;
    println!(
        "bootstrap over {} images ({} skipped): DSC {:.4} ± {:.4}, CI length {:.4} ± {:.4}",
        a.images, a.skipped, a.mean_dsc, a.std_dsc, a.ci_length_mean, a.ci_length_std
    );
    let skips = manifest.skipped();
    manifest.write(&out)?;
    Ok(Status::from_skips(skips))
}

#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    /// JSON generator spec; flags override its fields
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub layers: usize,
    #[arg(long)]
    pub side: Option<usize>,
    /// Fraction of half the side covered by the disc radius
    #[arg(long)]
    pub disc: Option<f64>,
    /// Fixed pore count per layer
    #[arg(long, conflicts_with = "poisson")]
    pub pores: Option<usize>,
    /// Poisson mean pore count per layer
    #[arg(long)]
    pub poisson: Option<f64>,
    #[arg(long)]
    pub radius_min: Option<u32>,
    #[arg(long)]
    pub radius_max: Option<u32>,
    #[arg(long)]
    pub background: Option<u8>,
    #[arg(long)]
    pub solid: Option<u8>,
    #[arg(long)]
    pub pore: Option<u8>,
    #[arg(long)]
    pub overlap: bool,
    /// Probability that a pore holds a trapped particle
    #[arg(long)]
    pub trapped: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub salt_pepper: Option<f64>,
    #[arg(long, value_enum, default_value_t = DriftArg::Reshuffle)]
    pub drift: DriftArg,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DriftArg {
    None,
    Reshuffle,
}

#[derive(Serialize)]
struct SynthFile<'a> {
    spec: &'a SyntheticSpec,
    layers: usize,
    drift: Drift,
}

impl SynthArgs {
    pub fn to_spec(&self) -> Result<SyntheticSpec> {
        let mut s = match &self.spec {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => SyntheticSpec::default(),
        };
        let Intensities { background, solid, pore } = s.intensities;
        s.intensities = Intensities {
            background: self.background.unwrap_or(background),
            solid: self.solid.unwrap_or(solid),
            pore: self.pore.unwrap_or(pore),
        };
        if let Some(n) = self.pores {
            s.pores = PoreCount::Fixed(n);
        }
        if let Some(m) = self.poisson {
            s.pores = PoreCount::Poisson(m);
        }
        s.side = self.side.unwrap_or(s.side);
        s.disc_fraction = self.disc.unwrap_or(s.disc_fraction);
        s.radius_range = (
            self.radius_min.unwrap_or(s.radius_range.0),
            self.radius_max.unwrap_or(s.radius_range.1),
        );
        s.allow_overlap |= self.overlap;
        s.trapped_probability = self.trapped.unwrap_or(s.trapped_probability);
        s.noise = Noise {
            gaussian_sigma: self.sigma.unwrap_or(s.noise.gaussian_sigma),
            salt_pepper: self.salt_pepper.unwrap_or(s.noise.salt_pepper),
        };
        s.seed = self.seed.unwrap_or(s.seed);
        s.validate()?;
        Ok(s)
    }
}

pub fn synth(args: &SynthArgs) -> Result<Status> {
    let spec = args.to_spec()?;
    let drift = match args.drift {
        DriftArg::None => Drift::None,
        DriftArg::Reshuffle => Drift::Reshuffle,
    };
    let stack = generate_stack(&spec, args.layers, drift)?;
    let out = &args.output;
    for sub in ["images", "gt", "roi"] {
        std::fs::create_dir_all(out.join(sub)).with_context(|| format!("creating {}", out.display()))?;
    }
    let width = args.layers.saturating_sub(1).to_string().len().max(3);
    for (i, layer) in stack.iter().enumerate() {
        let name = format!("layer_{i:0width$}.png");
        save_gray(&layer.image, out.join("images").join(&name))?;
        save_mask(&layer.gt, out.join("gt").join(&name))?;
        save_mask(&layer.roi, out.join("roi").join(&name))?;
    }
    write_json(
        &out.join("spec.json"),
        &SynthFile {
            spec: &spec,
            layers: args.layers,
            drift,
        },
    )?;
    println!("wrote {} layers to {}", stack.len(), out.display());
    Ok(Status::Complete)
}

pub fn eval(o: &Overrides) -> Result<Status> {
    let started = timestamp();
    let (config, out) = setup(o)?;
    let input = config.input.as_deref().context("no input masks (set --input)")?;
    let gt_dir = config
        .eval
        .gt_dir
        .as_deref()
        .context("eval needs reference masks (set --gt-dir)")?;
    let roi = config.roi_mask()?;
    let conn = config.eval.connectivity;
    let mut manifest = RunManifest::new("eval", &config, started);
    let mut rows = Vec::new();
    for path in list_inputs(input)? {
        let stem = image_id(&path);
        let id = stem.strip_prefix("mask_").unwrap_or(&stem).to_string();
        let scored = (|| -> poreseg::Result<EvalRow> {
            let pred = load_mask(&path)?;
            let reference = load_mask(gt_dir.join(format!("{id}.png")))?;
            Ok(EvalRow {
                id: id.clone(),
                dsc: dsc(&pred, &reference)?,
                pred_instances: count_instances(&pred, conn),
                ref_instances: count_instances(&reference, conn),
                pred_porosity_pct: porosity_pct(&pred, roi.as_ref())?,
                ref_porosity_pct: porosity_pct(&reference, roi.as_ref())?,
            })
        })();
        match scored {
            Ok(row) => {
                manifest.images.push(ImageRecord {
                    id: id.clone(),
                    dsc: Some(row.dsc),
                    ..ImageRecord::default()
                });
                rows.push(row);
            }
            Err(e) => {
                warn!("{id}: {e}");
                manifest.images.push(ImageRecord::skipped(id, e.to_string()));
            }
        }
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let csv_path = out.join("eval.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let dscs: Vec<f64> = rows.iter().map(|r| r.dsc).collect();
    let (mean_dsc, std_dsc) = mean_std(&dscs).unzip();
    let porosity: Vec<f64> = rows.iter().map(|r| r.pred_porosity_pct).collect();
    manifest.aggregate = serde_json::json!({
        "images": rows.len(),
        "skipped": manifest.skipped(),
        "mean_dsc": mean_dsc,
        "std_dsc": std_dsc,
        "mean_pred_porosity_pct": mean_std(&porosity).map(|m| m.0),
        "pred_instances": rows.iter().map(|r| r.pred_instances).sum::<usize>(),
        "ref_instances": rows.iter().map(|r| r.ref_instances).sum::<usize>(),
    });
    write_json(&out.join("eval.json"), &manifest.aggregate)?;
    println!(
        "evaluated {} masks ({} skipped), DSC {:.4} ± {:.4}",
        rows.len(),
        manifest.skipped(),
        mean_dsc.unwrap_or(f64::NAN),
        std_dsc.unwrap_or(f64::NAN)
    );
    let skips = manifest.skipped();
    manifest.write(&out)?;
    Ok(Status::from_skips(skips))
}
