//! Command-line pipeline: reference masks, clustering, segmentation,
//! bootstrapping, synthetic data and evaluation.

pub mod commands;
pub mod config;
pub mod inputs;
pub mod report;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "poreseg", version, about = "Centroid-prompted porosity segmentation for XCT layer images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build reference masks by three-level intensity thresholding
    Refs(Overrides),
    /// Cluster layer images and save the centroid store
    Cluster(Overrides),
    /// Segment every layer, prompting from fresh or stored centroids
    Segment {
        #[command(flatten)]
        overrides: Overrides,
        /// Reuse a saved centroid store instead of clustering
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Bootstrap prompt sets and report Dice confidence intervals
    Bootstrap {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Generate synthetic disc images with known pores
    Synth(commands::SynthArgs),
    /// Score predicted masks against references
    Eval(Overrides),
}

/// How a run ended when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Every input was processed.
    Complete,
    /// Some inputs were skipped; see the manifest.
    Partial,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Complete => 0,
            Status::Partial => 2,
        }
    }

    fn from_skips(n: usize) -> Self {
        if n == 0 {
            Status::Complete
        } else {
            Status::Partial
        }
    }
}

pub fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Refs(o) => commands::refs(&o),
        Command::Cluster(o) => commands::cluster(&o),
        Command::Segment { overrides, store } => commands::segment(&overrides, store.as_deref()),
        Command::Bootstrap { overrides, store } => commands::bootstrap(&overrides, store.as_deref()),
        Command::Synth(args) => commands::synth(&args),
        Command::Eval(o) => commands::eval(&o),
    }
}
