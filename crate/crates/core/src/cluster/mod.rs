//! Partitional clustering of layer images and the centroid store that feeds
//! prompt generation.

mod distance;
mod kmeans;
mod kmedoids;
mod store;

use serde::{Deserialize, Serialize};

pub use distance::{dtw, euclidean, Distance};
pub use kmeans::{kmeans_images, KMeansParams};
pub use kmedoids::{kmedoids_images, DtwSettings, KMedoidsParams};
pub use store::{
    build_centroid_records, nearest_record, CentroidRecord, CentroidStore, Provenance,
    StoreThreshold,
};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// A layer image flattened row-major into reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector {
    pub source_id: String,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ImageVector {
    pub fn from_image(source_id: impl Into<String>, img: &GrayImage) -> Self {
        Self {
            source_id: source_id.into(),
            width: img.width(),
            height: img.height(),
            values: img.data().iter().map(|&v| v as f64).collect(),
        }
    }

    /// Round half up and clamp back to an 8-bit image.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .values
            .iter()
            .map(|&v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::new(self.width, self.height, data).expect("vector length matches dimensions")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Kmedoids,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Kmeans => "kmeans",
            Method::Kmedoids => "kmedoids",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Method::Kmeans),
            "kmedoids" => Ok(Method::Kmedoids),
            other => Err(Error::arg(format!("unknown clustering method {other:?}"))),
        }
    }
}

/// Result of clustering a set of layer images.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub method: Method,
    pub distance: Distance,
    pub k: usize,
    pub seed: u64,
    /// Input ids, in input order.
    pub ids: Vec<String>,
    /// Cluster index for each input, aligned with `ids`.
    pub assignments: Vec<usize>,
    /// Means (k-means) or member medoids (k-medoids).
    pub centroids: Vec<ImageVector>,
    /// Input indices of the medoids, k-medoids only.
    pub medoids: Option<Vec<usize>>,
    /// Final objective: sum of squared distances (k-means) or sum of
    /// distances (k-medoids).
    pub objective: f64,
    /// Objective after each iteration (k-means) or accepted swap (k-medoids)
    /// of the winning run.
    pub objective_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn assignment_of(&self, id: &str) -> Option<usize> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|p| self.assignments[p])
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.ids
            .iter()
            .zip(&self.assignments)
            .filter(|(_, &a)| a == cluster)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

fn check_inputs(images: &[ImageVector], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::arg("cluster count must be positive"));
    }
    if images.len() < k {
        return Err(Error::arg(format!(
            "need at least {k} images to form {k} clusters, got {}",
            images.len()
        )));
    }
    let first = &images[0];
    if let Some(bad) = images
        .iter()
        .find(|v| v.width != first.width || v.height != first.height || v.values.len() != first.values.len())
    {
        return Err(Error::arg(format!(
            "image {} is {}x{} but {} is {}x{}",
            bad.source_id, bad.width, bad.height, first.source_id, first.width, first.height
        )));
    }
    Ok(())
}
