//! Run manifests and tabular reports.

use std::path::Path;

use anyhow::{Context, Result};
use poreseg::eval::{BootstrapReport, BootstrapSummary};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

/// Outcome for one input image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub status: ImageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dsc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStatus {
    #[default]
    Processed,
    Skipped,
}

impl ImageRecord {
    pub fn skipped(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            status: ImageStatus::Skipped,
            reason: Some(reason.into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub dir: String,
    pub reused: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub started: String,
    pub finished: String,
    pub config: &'a PipelineConfig,
    pub store: Option<StoreInfo>,
    pub images: Vec<ImageRecord>,
    pub aggregate: serde_json::Value,
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl<'a> RunManifest<'a> {
    pub fn new(command: &'static str, config: &'a PipelineConfig, started: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            started,
            finished: String::new(),
            config,
            store: None,
            images: Vec::new(),
            aggregate: serde_json::Value::Null,
        }
    }

    pub fn skipped(&self) -> usize {
        self.images
            .iter()
            .filter(|r| r.status == ImageStatus::Skipped)
            .count()
    }

    /// Sort records by id, stamp the finish time and write `manifest.json`.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.images.sort_by(|a, b| a.id.cmp(&b.id));
        self.finished = timestamp();
        write_json(&dir.join("manifest.json"), &self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Population mean and standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// One row of `bootstrap.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub id: String,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub length: f64,
    pub chosen_0: usize,
    pub chosen_1: usize,
    pub chosen_2: usize,
}

pub const BOOTSTRAP_HEADER: [&str; 9] = [
    "id", "mean", "std", "ci_low", "ci_high", "length", "chosen_0", "chosen_1", "chosen_2",
];

impl BootstrapRow {
    pub fn new(id: &str, s: &BootstrapSummary, chosen: [usize; 3]) -> Self {
        Self {
            id: id.to_string(),
            mean: s.mean,
            std: s.std,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            length: s.length,
            chosen_0: chosen[0],
            chosen_1: chosen[1],
            chosen_2: chosen[2],
        }
    }
}

pub fn write_bootstrap_csv(path: &Path, report: &BootstrapReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in &report.per_image {
        w.serialize(BootstrapRow::new(&r.id, &r.summary, r.chosen))?;
    }
    if report.per_image.is_empty() {
        w.write_record(BOOTSTRAP_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bootstrap_csv(path: &Path) -> Result<Vec<BootstrapRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    anyhow::ensure!(
        header == BOOTSTRAP_HEADER,
        "{}: unexpected header {header:?}",
        path.display()
    );
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// One row of `eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub dsc: f64,
    pub pred_instances: usize,
    pub ref_instances: usize,
    pub pred_porosity_pct: f64,
    pub ref_porosity_pct: f64,
}
