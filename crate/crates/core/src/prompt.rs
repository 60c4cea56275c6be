//! Point prompts drawn from centroid foreground pools.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, with index draws through `Rng::random_range`, so a given
//! `(pool, m, seed)` produces the same prompts on every platform.
//!
//! * [`generate_prompts`] draws `m` distinct pool points (partial
//!   Fisher-Yates shuffle).
//! * [`bootstrap_prompts`] draws `B` sets of `m` points *with* replacement;
//!   set `i` uses stream `i` of the generator, so any iteration can be
//!   regenerated on its own with [`bootstrap_prompt`].

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::CentroidRecord;
use crate::error::{Error, Result};

/// Default prompt size for densely porous samples.
pub const DEFAULT_PROMPT_SIZE: usize = 10_000;
/// Prompt size for samples with few, small pores.
pub const SPARSE_PROMPT_SIZE: usize = 1_000;
pub const DEFAULT_BOOTSTRAP_ITERS: usize = 100;

/// Foreground point prompts in original image coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub points: Vec<[u32; 2]>,
    pub labels: Vec<u8>,
    /// Cluster index of the record the points came from.
    pub source: usize,
    pub seed: u64,
}

impl PromptSet {
    /// Foreground prompts at the given points.
    pub fn new(points: Vec<[u32; 2]>, source: usize, seed: u64) -> Self {
        let labels = vec![1; points.len()];
        Self {
            points,
            labels,
            source,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn usable_pool(record: &CentroidRecord, m: usize) -> Result<&[(u32, u32)]> {
    if record.pool.is_empty() {
        return Err(Error::UnusableRecord(record.cluster_index));
    }
    if m == 0 {
        return Err(Error::arg("prompt size must be at least 1"));
    }
    Ok(&record.pool)
}

/// `m` distinct points sampled uniformly from the record's pool. If the pool
/// has `m` or fewer points the whole pool is returned.
pub fn generate_prompts(record: &CentroidRecord, m: usize, seed: u64) -> Result<PromptSet> {
    let pool = usable_pool(record, m)?;
    let n = pool.len();
    if m >= n {
        if m > n {
            warn!(
                "record {}: prompt size {m} exceeds pool of {n}; using the whole pool",
                record.cluster_index
            );
        }
        let points = pool.iter().map(|&(x, y)| [x, y]).collect();
        return Ok(PromptSet::new(points, record.cluster_index, seed));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let points = idx[..m]
        .iter()
        .map(|&i| [pool[i].0, pool[i].1])
        .collect();
    Ok(PromptSet::new(points, record.cluster_index, seed))
}

/// Bootstrap iteration `iter`: `m` pool points drawn with replacement.
pub fn bootstrap_prompt(
    record: &CentroidRecord,
    m: usize,
    seed: u64,
    iter: usize,
) -> Result<PromptSet> {
    let pool = usable_pool(record, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter as u64);
    let points = (0..m)
        .map(|_| {
            let (x, y) = pool[rng.random_range(0..pool.len())];
            [x, y]
        })
        .collect();
    Ok(PromptSet::new(points, record.cluster_index, seed))
}

/// `iters` independent with-replacement draws of `m` points.
pub fn bootstrap_prompts(
    record: &CentroidRecord,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<PromptSet>> {
    if iters == 0 {
        return Err(Error::arg("bootstrap iterations must be at least 1"));
    }
    (0..iters)
        .map(|i| bootstrap_prompt(record, m, seed, i))
        .collect()
}
