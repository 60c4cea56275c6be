//! Pipeline configuration: a TOML file whose values command-line flags
//! override.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use poreseg::backend::{BackendDescriptor, DEFAULT_THRESH};
use poreseg::cluster::{DtwSettings, KMeansParams, KMedoidsParams, Distance, Method};
use poreseg::eval::{Connectivity, DEFAULT_ALPHA};
use poreseg::image::load_mask;
use poreseg::prompt::{DEFAULT_BOOTSTRAP_ITERS, DEFAULT_PROMPT_SIZE};
use poreseg::threshold::{ThresholdParams, DEFAULT_FILTER_K};
use poreseg::BinaryMask;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of PNG layers, or a glob pattern such as `layers/*.png`.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Worker threads for per-image work; each gets its own backend.
    pub jobs: usize,
    pub cluster: ClusterConfig,
    pub threshold: ThresholdConfig,
    pub prompt: PromptConfig,
    pub backend: BackendConfig,
    pub bootstrap: BootstrapConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            jobs: 1,
            cluster: ClusterConfig::default(),
            threshold: ThresholdConfig::default(),
            prompt: PromptConfig::default(),
            backend: BackendConfig::default(),
            bootstrap: BootstrapConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub method: Method,
    pub distance: Distance,
    pub k: usize,
    pub seed: u64,
    /// Side images are area-averaged to before DTW; 0 keeps full resolution.
    pub dtw_side: usize,
    /// Sakoe-Chiba band radius as a fraction of sequence length; 1.0 is
    /// unconstrained.
    pub dtw_band: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            method: Method::Kmeans,
            distance: Distance::Euclidean,
            k: 3,
            seed: 0,
            dtw_side: 64,
            dtw_band: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub filter_k: usize,
    pub background_floor: u8,
    pub roi: Option<PathBuf>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            filter_k: DEFAULT_FILTER_K,
            background_floor: 0,
            roi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub size: usize,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_PROMPT_SIZE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Directory holding `encoder.onnx` and `decoder.onnx`.
    pub model: Option<PathBuf>,
    pub thresh: f64,
    /// Predicted IoU the oracle reports for its three masks.
    pub oracle_scores: [f64; 3],
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Oracle,
            model: None,
            thresh: DEFAULT_THRESH,
            oracle_scores: [0.7, 0.85, 0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub iterations: usize,
    /// Points per bootstrap draw; falls back to `prompt.size`.
    pub prompt_size: Option<usize>,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_BOOTSTRAP_ITERS,
            prompt_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub connectivity: Connectivity,
    pub alpha: f64,
    /// Reference masks named `<id>.png`; when absent references are computed.
    pub gt_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Eight,
            alpha: DEFAULT_ALPHA,
            gt_dir: None,
        }
    }
}

/// Command-line overrides shared by the pipeline subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input directory or glob of PNG layers
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Seed for clustering, prompting and bootstrapping
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub distance: Option<Distance>,
    #[arg(long)]
    pub dtw_side: Option<usize>,
    #[arg(long)]
    pub dtw_band: Option<f64>,
    /// Median filter window (odd)
    #[arg(long)]
    pub filter_k: Option<usize>,
    /// Pixels at or below this intensity never count as pore
    #[arg(long)]
    pub floor: Option<u8>,
    /// Region-of-interest mask PNG
    #[arg(long)]
    pub roi: Option<PathBuf>,
    #[arg(long)]
    pub prompt_size: Option<usize>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Directory with encoder.onnx and decoder.onnx
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub thresh: Option<f64>,
    /// Oracle predicted IoUs, e.g. 0.7,0.85,0.95
    #[arg(long, value_delimiter = ',')]
    pub oracle_scores: Option<Vec<f64>>,
    #[arg(long)]
    pub bootstrap_iters: Option<usize>,
    #[arg(long)]
    pub connectivity: Option<u8>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Directory of reference masks named <id>.png
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Config file (if any) with the flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($($field:expr => $value:expr),* $(,)?) => {
                $(if let Some(v) = $value.clone() { $field = v.into(); })*
            };
        }
        set! {
            c.input => o.input,
            c.output => o.output,
            c.jobs => o.jobs,
            c.cluster.k => o.k,
            c.cluster.method => o.method,
            c.cluster.distance => o.distance,
            c.cluster.dtw_side => o.dtw_side,
            c.cluster.dtw_band => o.dtw_band,
            c.threshold.filter_k => o.filter_k,
            c.threshold.background_floor => o.floor,
            c.threshold.roi => o.roi,
            c.prompt.size => o.prompt_size,
            c.backend.kind => o.backend,
            c.backend.model => o.model,
            c.backend.thresh => o.thresh,
            c.bootstrap.iterations => o.bootstrap_iters,
            c.eval.alpha => o.alpha,
            c.eval.gt_dir => o.gt_dir,
        }
        if let Some(seed) = o.seed {
            c.cluster.seed = seed;
            c.prompt.seed = seed;
            c.bootstrap.seed = seed;
        }
        if let Some(size) = o.prompt_size {
            c.bootstrap.prompt_size = Some(size);
        }
        if let Some(s) = &o.oracle_scores {
            c.backend.oracle_scores = s
                .as_slice()
                .try_into()
                .map_err(|_| anyhow::anyhow!("--oracle-scores takes three values, got {}", s.len()))?;
        }
        if let Some(n) = o.connectivity {
            c.eval.connectivity = Connectivity::from_number(n)?;
        }
        Ok(c)
    }

    /// Range and path checks run before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if self.cluster.k == 0 {
            bail!("k must be at least 1");
        }
        if !(self.cluster.dtw_band > 0.0 && self.cluster.dtw_band <= 1.0) {
            bail!("dtw_band {} outside (0, 1]", self.cluster.dtw_band);
        }
        if self.threshold.filter_k.is_multiple_of(2) {
            bail!("filter_k {} must be odd", self.threshold.filter_k);
        }
        if !(0.0..=1.0).contains(&self.backend.thresh) {
            bail!("thresh {} outside [0, 1]", self.backend.thresh);
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            bail!("alpha {} outside (0, 1)", self.eval.alpha);
        }
        if self.prompt.size == 0 || self.bootstrap_prompt_size() == 0 {
            bail!("prompt size must be at least 1");
        }
        if self.bootstrap.iterations == 0 {
            bail!("bootstrap iterations must be at least 1");
        }
        for (what, p) in [
            ("roi", &self.threshold.roi),
            ("gt_dir", &self.eval.gt_dir),
            ("model", &self.backend.model),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{what} path {} does not exist", p.display());
                }
            }
        }
        self.backend_descriptor()?.validate()?;
        Ok(())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .context("no output directory (set --output or `output` in the config)")
    }

    pub fn bootstrap_prompt_size(&self) -> usize {
        self.bootstrap.prompt_size.unwrap_or(self.prompt.size)
    }

    pub fn roi_mask(&self) -> Result<Option<BinaryMask>> {
        self.threshold
            .roi
            .as_ref()
            .map(|p| load_mask(p).with_context(|| format!("loading roi {}", p.display())))
            .transpose()
    }

    pub fn threshold_params(&self) -> Result<ThresholdParams> {
        Ok(ThresholdParams {
            filter_k: self.threshold.filter_k,
            background_floor: self.threshold.background_floor,
            roi: self.roi_mask()?,
        })
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            k: self.cluster.k,
            seed: self.cluster.seed,
            ..KMeansParams::default()
        }
    }

    pub fn kmedoids_params(&self) -> KMedoidsParams {
        KMedoidsParams {
            k: self.cluster.k,
            distance: self.cluster.distance,
            dtw: DtwSettings {
                downsample_side: (self.cluster.dtw_side > 0).then_some(self.cluster.dtw_side),
                band_fraction: (self.cluster.dtw_band < 1.0).then_some(self.cluster.dtw_band),
            },
            seed: self.cluster.seed,
            ..KMedoidsParams::default()
        }
    }

    pub fn backend_descriptor(&self) -> Result<BackendDescriptor> {
        Ok(match self.backend.kind {
            BackendKind::Oracle => BackendDescriptor::Oracle {
                scores: self.backend.oracle_scores,
            },
            BackendKind::Model => {
                let dir = self
                    .backend
                    .model
                    .as_ref()
                    .context("the model backend needs --model <dir>")?;
                BackendDescriptor::model_dir(dir)
            }
        })
    }
}
