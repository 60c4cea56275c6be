//! Centroid records and their on-disk store.
//!
//! A store is a directory holding `centroid_<k>.png` per cluster, an optional
//! `roi.png`, and `store.json`:
//!
//! ```json
//! {
//!   "version": 1,
//!   "method": "kmeans", "distance": "euclidean", "k": 3, "seed": 0,
//!   "threshold": { "filter_k": 3, "background_floor": 0, "roi": false },
//!   "records": [
//!     { "cluster_index": 0, "image": "centroid_0.png", "width": 256, "height": 256,
//!       "usable": true, "pool": [[x, y], ...],
//!       "provenance": { "method": "kmeans", "distance": "euclidean", "seed": 0,
//!                       "source_ids": [...], "layer_range": ["first", "last"] } }
//!   ]
//! }
//! ```

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::distance::squared_euclidean;
use super::{ClusterModel, Distance, ImageVector, Method};
use crate::error::{Error, Result};
use crate::image::{load_gray, load_mask, save_gray, save_mask, GrayImage};
use crate::threshold::{make_reference_mask, ThresholdParams};

const STORE_VERSION: u32 = 1;
const STORE_FILE: &str = "store.json";
const ROI_FILE: &str = "roi.png";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub distance: Distance,
    pub seed: u64,
    /// Member image ids of the cluster, in input order.
    pub source_ids: Vec<String>,
    /// First and last member id.
    pub layer_range: Option<(String, String)>,
}

/// A cluster representative and the foreground coordinates prompts are
/// drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidRecord {
    pub cluster_index: usize,
    pub image: GrayImage,
    /// `(x, y)` foreground pixels of the centroid's reference mask,
    /// row-major order.
    pub pool: Vec<(u32, u32)>,
    pub provenance: Provenance,
}

impl CentroidRecord {
    pub fn usable(&self) -> bool {
        !self.pool.is_empty()
    }
}

/// Round each centroid to 8 bits, threshold it and collect its foreground
/// pixels. Records whose centroid yields no foreground (or cannot be
/// thresholded at all) are kept with an empty pool and a warning.
pub fn build_centroid_records(
    model: &ClusterModel,
    params: &ThresholdParams,
) -> Vec<CentroidRecord> {
    model
        .centroids
        .iter()
        .enumerate()
        .map(|(c, centroid)| {
            let image = centroid.to_gray();
            let pool = match make_reference_mask(&image, params) {
                Ok(r) => r.mask.foreground(),
                Err(e) => {
                    warn!("centroid {c}: {e}");
                    Vec::new()
                }
            };
            if pool.is_empty() {
                warn!("centroid {c} has no foreground pixels; record is unusable for prompting");
            }
            let members: Vec<String> = model.members(c).into_iter().map(String::from).collect();
            let layer_range = match (members.first(), members.last()) {
                (Some(a), Some(b)) => Some((a.clone(), b.clone())),
                _ => None,
            };
            CentroidRecord {
                cluster_index: c,
                image,
                pool,
                provenance: Provenance {
                    method: model.method,
                    distance: model.distance,
                    seed: model.seed,
                    source_ids: members,
                    layer_range,
                },
            }
        })
        .collect()
}

/// Index of the record whose centroid image is closest (Euclidean) to `img`.
/// Only usable records are considered.
pub fn nearest_record(records: &[CentroidRecord], img: &GrayImage) -> Option<usize> {
    let x = ImageVector::from_image("", img);
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.usable() && r.image.width() == img.width() && r.image.height() == img.height()
        })
        .map(|(i, r)| {
            let c = ImageVector::from_image("", &r.image);
            (i, squared_euclidean(&x.values, &c.values))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Threshold settings the pools were produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreThreshold {
    pub filter_k: usize,
    pub background_floor: u8,
    pub roi: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidStore {
    pub method: Method,
    pub distance: Distance,
    pub k: usize,
    pub seed: u64,
    pub threshold: ThresholdParams,
    pub records: Vec<CentroidRecord>,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    method: Method,
    distance: Distance,
    k: usize,
    seed: u64,
    threshold: StoreThreshold,
    records: Vec<RecordFile>,
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    cluster_index: usize,
    image: String,
    width: usize,
    height: usize,
    usable: bool,
    pool: Vec<[u32; 2]>,
    provenance: Provenance,
}

impl CentroidStore {
    pub fn from_model(model: &ClusterModel, threshold: ThresholdParams) -> Self {
        let records = build_centroid_records(model, &threshold);
        Self {
            method: model.method,
            distance: model.distance,
            k: model.k,
            seed: model.seed,
            threshold,
            records,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let name = format!("centroid_{}.png", r.cluster_index);
            save_gray(&r.image, dir.join(&name))?;
            records.push(RecordFile {
                cluster_index: r.cluster_index,
                image: name,
                width: r.image.width(),
                height: r.image.height(),
                usable: r.usable(),
                pool: r.pool.iter().map(|&(x, y)| [x, y]).collect(),
                provenance: r.provenance.clone(),
            });
        }
        if let Some(roi) = &self.threshold.roi {
            save_mask(roi, dir.join(ROI_FILE))?;
        }
        let file = StoreFile {
            version: STORE_VERSION,
            method: self.method,
            distance: self.distance,
            k: self.k,
            seed: self.seed,
            threshold: StoreThreshold {
                filter_k: self.threshold.filter_k,
                background_floor: self.threshold.background_floor,
                roi: self.threshold.roi.is_some(),
            },
            records,
        };
        let json = serde_json::to_string_pretty(&file).expect("store is serializable");
        let path = dir.join(STORE_FILE);
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Load a store and check every record: image dimensions, pool bounds,
    /// and that each pool pixel is foreground when the centroid image is
    /// re-thresholded with the stored settings.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(STORE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: StoreFile = serde_json::from_str(&text)
            .map_err(|e| Error::Store(format!("{}: {e}", path.display())))?;
        if file.version != STORE_VERSION {
            return Err(Error::Store(format!(
                "unsupported store version {}",
                file.version
            )));
        }
        let roi = if file.threshold.roi {
            Some(load_mask(dir.join(ROI_FILE))?)
        } else {
            None
        };
        let threshold = ThresholdParams {
            filter_k: file.threshold.filter_k,
            background_floor: file.threshold.background_floor,
            roi,
        };
        let mut records = Vec::with_capacity(file.records.len());
        for r in file.records {
            let bad = |why: String| Error::Store(format!("record {}: {why}", r.cluster_index));
            let image = load_gray(dir.join(&r.image))?;
            if (image.width(), image.height()) != (r.width, r.height) {
                return Err(bad(format!(
                    "image is {}x{}, expected {}x{}",
                    image.width(),
                    image.height(),
                    r.width,
                    r.height
                )));
            }
            if r.usable == r.pool.is_empty() {
                return Err(bad("usable flag disagrees with pool".into()));
            }
            if let Some(&[x, y]) = r
                .pool
                .iter()
                .find(|&&[x, y]| x as usize >= r.width || y as usize >= r.height)
            {
                return Err(bad(format!("pool coordinate ({x}, {y}) is out of bounds")));
            }
            if !r.pool.is_empty() {
                let mask = make_reference_mask(&image, &threshold)
                    .map_err(|e| bad(format!("centroid cannot be thresholded: {e}")))?
                    .mask;
                if let Some(&[x, y]) = r
                    .pool
                    .iter()
                    .find(|&&[x, y]| !mask.get(x as usize, y as usize))
                {
                    return Err(bad(format!("pool coordinate ({x}, {y}) is not foreground")));
                }
            }
            records.push(CentroidRecord {
                cluster_index: r.cluster_index,
                image,
                pool: r.pool.into_iter().map(|[x, y]| (x, y)).collect(),
                provenance: r.provenance,
            });
        }
        Ok(Self {
            method: file.method,
            distance: file.distance,
            k: file.k,
            seed: file.seed,
            threshold,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{kmeans_images, KMeansParams};

    fn stripes(id: &str, pore_col: usize) -> ImageVector {
        // background 10, solid 200, one pore column at 90
        let (w, h) = (8, 8);
        let mut values = vec![200.0; w * h];
        for y in 0..h {
            values[y * w] = 10.0;
            values[y * w + pore_col] = 90.0;
        }
        ImageVector {
            source_id: id.into(),
            width: w,
            height: h,
            values,
        }
    }

    fn params() -> ThresholdParams {
        ThresholdParams {
            filter_k: 1,
            background_floor: 10,
            roi: None,
        }
    }

    fn sample_store() -> CentroidStore {
        let imgs = vec![stripes("a", 3), stripes("b", 3), stripes("c", 6)];
        let model = kmeans_images(&imgs, &KMeansParams { k: 2, ..Default::default() }).unwrap();
        CentroidStore::from_model(&model, params())
    }

    #[test]
    fn pools_are_reference_foreground() {
        let store = sample_store();
        assert_eq!(store.records.len(), 2);
        for r in &store.records {
            assert_eq!(r.pool.len(), 8);
            let mask = make_reference_mask(&r.image, &params()).unwrap().mask;
            assert!(r.pool.iter().all(|&(x, y)| mask.get(x as usize, y as usize)));
        }
        let cols: Vec<u32> = store.records.iter().map(|r| r.pool[0].0).collect();
        assert!(cols.contains(&3) && cols.contains(&6));
    }

    #[test]
    fn constant_centroid_is_flagged() {
        let flat = ImageVector {
            source_id: "flat".into(),
            width: 4,
            height: 4,
            values: vec![200.0; 16],
        };
        let model = kmeans_images(&[flat], &KMeansParams { k: 1, ..Default::default() }).unwrap();
        let recs = build_centroid_records(&model, &params());
        assert!(!recs[0].usable());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = sample_store();
        store.save(dir.path()).unwrap();
        assert_eq!(CentroidStore::load(dir.path()).unwrap(), store);
    }

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = CentroidStore {
            method: Method::Kmedoids,
            distance: Distance::Dtw,
            k: 0,
            seed: 1,
            threshold: ThresholdParams::default(),
            records: vec![],
        };
        store.save(dir.path()).unwrap();
        assert_eq!(CentroidStore::load(dir.path()).unwrap(), store);
    }

    #[test]
    fn tampered_pool_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = sample_store();
        store.records[1].pool[0] = (1, 1); // solid pixel
        store.save(dir.path()).unwrap();
        let err = CentroidStore::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{err}");

        store.records[1].pool[0] = (99, 1);
        store.save(dir.path()).unwrap();
        let err = CentroidStore::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("out of bounds"), "{err}");
    }

    #[test]
    fn garbage_json_is_a_store_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(STORE_FILE), "{not json").unwrap();
        assert!(matches!(CentroidStore::load(dir.path()), Err(Error::Store(_))));
    }

    #[test]
    fn nearest_record_prefers_closest_centroid() {
        let store = sample_store();
        let img = stripes("q", 6).to_gray();
        let i = nearest_record(&store.records, &img).unwrap();
        assert_eq!(store.records[i].pool[0].0, 6);
    }
}
