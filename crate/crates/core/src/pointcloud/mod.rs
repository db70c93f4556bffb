//! Point clouds: surface sampling, normalisation, Chamfer distance and the
//! dataset diversity score, plus the binary point-cloud cache.

mod cache;
mod chamfer;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{surface_areas, TriangleMesh, Vec3};
use crate::rng::{stream, Purpose};

pub use cache::{cache_file_name, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use chamfer::{chamfer_distance, chamfer_distance_brute, diversity_score, DiversityOptions};

/// Points per cloud used throughout the pipeline unless overridden.
pub const DEFAULT_POINTS: usize = 5000;
/// Per-cloud subsample size for the diversity score.
pub const DEFAULT_DIVERSITY_SUBSAMPLE: usize = 1024;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("mesh surface area {0:e} is too small to sample")]
    ZeroAreaMesh(f64),
    #[error("point count must be at least 1")]
    NoPoints,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("diversity needs at least two clouds, got {0}")]
    TooFewClouds(usize),
    #[error("cache file {path}: {reason}")]
    BadCache { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub design_id: Option<String>,
    pub sample_seed: Option<u64>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self {
            points,
            design_id: None,
            sample_seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major `n × 3` buffer.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn to_f32(&self) -> Vec<[f32; 3]> {
        self.points
            .iter()
            .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
            .collect()
    }
}

/// Map applied by [`normalize_unit_sphere`]: `p' = (p - translation) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub translation: Vec3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.translation.x) / self.scale,
            (p[1] - self.translation.y) / self.scale,
            (p[2] - self.translation.z) / self.scale,
        ]
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] * self.scale + self.translation.x,
            p[1] * self.scale + self.translation.y,
            p[2] * self.scale + self.translation.z,
        ]
    }
}

/// Draws `n` points on the surface: a face with probability proportional
/// to its area, then a uniform point inside it via the square-root
/// barycentric map. Same `(mesh, n, seed)` gives bitwise-equal output.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud, PointCloudError> {
    if n == 0 {
        return Err(PointCloudError::NoPoints);
    }
    let areas = surface_areas(mesh);
    if !(areas.total >= 1e-18) {
        return Err(PointCloudError::ZeroAreaMesh(areas.total));
    }
    let mut cumulative = Vec::with_capacity(areas.per_face.len());
    let mut acc = 0.0;
    for a in &areas.per_face {
        acc += a;
        cumulative.push(acc);
    }
    let last_positive = areas
        .per_face
        .iter()
        .rposition(|&a| a > 0.0)
        .expect("positive total area implies a positive face");

    let mut rng = stream(seed, Purpose::Sampling, 0);
    let points = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * acc;
            let face = cumulative.partition_point(|&c| c <= u).min(last_positive);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            let [a, b, c] = mesh.triangle(face);
            (a * wa + b * wb + c * wc).to_array()
        })
        .collect();
    Ok(PointCloud {
        points,
        design_id: None,
        sample_seed: Some(seed),
    })
}

/// Centres the cloud on its centroid and scales the farthest point to
/// radius 1. A cloud whose radius is below `1e-12` is only translated.
pub fn normalize_unit_sphere(pc: &PointCloud) -> (PointCloud, NormalizationTransform) {
    let n = pc.points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in &pc.points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let c = Vec3::new(c[0] / n, c[1] / n, c[2] / n);
    let radius = pc
        .points
        .iter()
        .map(|p| (Vec3::from(*p) - c).norm())
        .fold(0.0, f64::max);
    let scale = if radius < 1e-12 { 1.0 } else { radius };
    let t = NormalizationTransform {
        translation: c,
        scale,
    };
    let out = PointCloud {
        points: pc.points.iter().map(|&p| t.apply(p)).collect(),
        design_id: pc.design_id.clone(),
        sample_seed: pc.sample_seed,
    };
    (out, t)
}
