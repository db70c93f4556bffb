use rayon::prelude::*;

use super::{PointCloud, PointCloudError, DEFAULT_DIVERSITY_SUBSAMPLE};
use crate::knn::SpatialGrid;
use crate::real::{pairwise_sum, sq_dist};
use crate::rng::{stream, Purpose};

fn mean_nearest_brute(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| to.iter().map(|b| sq_dist(a, b)).fold(f64::INFINITY, f64::min))
        .sum();
    total / from.len() as f64
}

fn mean_nearest_grid(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let flat: Vec<f64> = to.iter().flatten().copied().collect();
    let grid = SpatialGrid::build(&flat);
    let mut buf = Vec::with_capacity(1);
    let total: f64 = from
        .iter()
        .map(|a| {
            grid.nearest(*a, 1, None, &mut buf);
            buf[0].0
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance from
/// A to B plus the same from B to A. Nearest neighbours come from a spatial
/// grid; [`chamfer_distance_brute`] is the quadratic reference.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64, PointCloudError> {
    if a.is_empty() || b.is_empty() {
        return Err(PointCloudError::EmptyCloud);
    }
    Ok(mean_nearest_grid(&a.points, &b.points) + mean_nearest_grid(&b.points, &a.points))
}

pub fn chamfer_distance_brute(a: &PointCloud, b: &PointCloud) -> Result<f64, PointCloudError> {
    if a.is_empty() || b.is_empty() {
        return Err(PointCloudError::EmptyCloud);
    }
    Ok(mean_nearest_brute(&a.points, &b.points) + mean_nearest_brute(&b.points, &a.points))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityOptions {
    /// Points kept per cloud before the pairwise pass; `None` uses every
    /// point.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for DiversityOptions {
    fn default() -> Self {
        Self {
            subsample: Some(DEFAULT_DIVERSITY_SUBSAMPLE),
            seed: 0,
        }
    }
}

fn subsample(pc: &PointCloud, m: usize, seed: u64, index: u64) -> PointCloud {
    use rand::Rng;
    if pc.len() <= m {
        return pc.clone();
    }
    let mut rng = stream(seed, Purpose::Subsample, index);
    let mut idx: Vec<usize> = (0..pc.len()).collect();
    // partial Fisher-Yates
    for i in 0..m {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..m].to_vec();
    chosen.sort_unstable();
    PointCloud {
        points: chosen.into_iter().map(|i| pc.points[i]).collect(),
        design_id: pc.design_id.clone(),
        sample_seed: pc.sample_seed,
    }
}

/// Mean Chamfer distance over all unordered pairs of clouds.
///
/// Pairs are evaluated in parallel and summed with a fixed pairwise tree,
/// so the score does not depend on thread count.
pub fn diversity_score(clouds: &[PointCloud], opts: DiversityOptions) -> Result<f64, PointCloudError> {
    if clouds.len() < 2 {
        return Err(PointCloudError::TooFewClouds(clouds.len()));
    }
    if clouds.iter().any(PointCloud::is_empty) {
        return Err(PointCloudError::EmptyCloud);
    }
    let prepared: Vec<PointCloud> = match opts.subsample {
        Some(m) => clouds
            .par_iter()
            .enumerate()
            .map(|(i, c)| subsample(c, m.max(1), opts.seed, i as u64))
            .collect(),
        None => clouds.to_vec(),
    };
    let pairs: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|i| (i + 1..prepared.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| chamfer_distance(&prepared[i], &prepared[j]))
        .collect::<Result<_, _>>()?;
    Ok(pairwise_sum(&values) / values.len() as f64)
}
