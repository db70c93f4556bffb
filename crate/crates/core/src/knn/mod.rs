//! Exact k-nearest-neighbour graphs in arbitrary feature dimension.
//!
//! Row `i` of a [`NeighborGraph`] lists the `k` indices with the smallest
//! squared distance to point `i`, ordered by `(distance, index)`; ties go to
//! the smaller index. All paths compute distances with [`crate::real::sq_dist`]
//! so their outputs agree exactly; [`knn_graph_gram`] trades that guarantee
//! for speed in high dimension.

mod grid;

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::real::{matmul, sq_dist, Real};

pub use grid::SpatialGrid;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnnError {
    #[error("k = {k} is too large for {n} points (self {self_rule})")]
    KTooLarge {
        k: usize,
        n: usize,
        self_rule: &'static str,
    },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("feature buffer of length {len} is not a multiple of dimension {dim}")]
    BadShape { len: usize, dim: usize },
}

/// `n × k` neighbour table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    indices: Vec<usize>,
    n: usize,
    k: usize,
    feature_dim: usize,
}

impl NeighborGraph {
    pub fn from_table(indices: Vec<usize>, n: usize, k: usize, feature_dim: usize) -> Self {
        assert_eq!(indices.len(), n * k);
        assert!(indices.iter().all(|&j| j < n));
        Self {
            indices,
            n,
            k,
            feature_dim,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

fn check(len: usize, dim: usize, k: usize, include_self: bool) -> Result<usize, KnnError> {
    if dim == 0 || len % dim != 0 {
        return Err(KnnError::BadShape { len, dim });
    }
    let n = len / dim;
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    let (limit, self_rule) = if include_self {
        (n, "included")
    } else {
        (n.saturating_sub(1), "excluded")
    };
    if k > limit {
        return Err(KnnError::KTooLarge { k, n, self_rule });
    }
    Ok(n)
}

#[inline]
pub(crate) fn order<T: Real>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Full `n × n` matrix of squared distances between rows of `x` (`n × dim`).
pub fn pairwise_sq_dist<T: Real>(x: &[T], dim: usize) -> Vec<T> {
    assert!(dim > 0 && x.len() % dim == 0);
    let n = x.len() / dim;
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

/// Brute-force kNN graph over the rows of `x` (`n × dim`).
pub fn knn_graph<T: Real>(
    x: &[T],
    dim: usize,
    k: usize,
    include_self: bool,
) -> Result<NeighborGraph, KnnError> {
    let n = check(x.len(), dim, k, include_self)?;
    let mut indices = vec![0usize; n * k];
    indices
        .par_chunks_mut(k)
        .enumerate()
        .for_each_init(
            || Vec::with_capacity(n),
            |cand, (i, row)| {
                let xi = &x[i * dim..(i + 1) * dim];
                cand.clear();
                cand.extend(
                    (0..n)
                        .filter(|&j| include_self || j != i)
                        .map(|j| (sq_dist(xi, &x[j * dim..(j + 1) * dim]), j)),
                );
                if cand.len() > k {
                    cand.select_nth_unstable_by(k - 1, order);
                    cand.truncate(k);
                }
                cand.sort_unstable_by(order);
                for (slot, &(_, j)) in row.iter_mut().zip(cand.iter()) {
                    *slot = j;
                }
            },
        );
    Ok(NeighborGraph::from_table(indices, n, k, dim))
}

/// kNN graph over the rows of `x` with distances expanded as
/// `‖a‖² + ‖b‖² − 2·a·b` so the bulk of the work is a matrix product.
///
/// Intended for high-dimensional learned features; rounding in the
/// expansion can reorder near-ties relative to [`knn_graph`].
pub fn knn_graph_gram<T: Real>(
    x: &[T],
    dim: usize,
    k: usize,
    include_self: bool,
) -> Result<NeighborGraph, KnnError> {
    const BLOCK: usize = 128;
    let n = check(x.len(), dim, k, include_self)?;
    let norms: Vec<T> = x.chunks_exact(dim).map(|r| r.iter().fold(T::zero(), |s, &v| s + v * v)).collect();
    let mut indices = vec![0usize; n * k];
    let two = T::one() + T::one();
    indices
        .par_chunks_mut(k * BLOCK)
        .enumerate()
        .for_each_init(
            || (vec![T::zero(); BLOCK * n], Vec::with_capacity(n)),
            |(gram, cand), (block, rows)| {
                let start = block * BLOCK;
                let m = rows.len() / k;
                let gram = &mut gram[..m * n];
                matmul(m, dim, n, &x[start * dim..(start + m) * dim], false, x, true, T::zero(), gram);
                for (r, row) in rows.chunks_exact_mut(k).enumerate() {
                    let i = start + r;
                    let g = &gram[r * n..(r + 1) * n];
                    cand.clear();
                    cand.extend((0..n).filter(|&j| include_self || j != i).map(|j| {
                        let d = if j == i { T::zero() } else { norms[i] + norms[j] - two * g[j] };
                        (d.max(T::zero()), j)
                    }));
                    if cand.len() > k {
                        cand.select_nth_unstable_by(k - 1, order);
                        cand.truncate(k);
                    }
                    cand.sort_unstable_by(order);
                    for (slot, &(_, j)) in row.iter_mut().zip(cand.iter()) {
                        *slot = j;
                    }
                }
            },
        );
    Ok(NeighborGraph::from_table(indices, n, k, dim))
}

/// kNN graph over 3-D points through a uniform hash grid; output is
/// identical to [`knn_graph`] including tie-breaking.
pub fn knn_graph_accelerated<T: Real>(
    points: &[T],
    k: usize,
    include_self: bool,
) -> Result<NeighborGraph, KnnError> {
    let n = check(points.len(), 3, k, include_self)?;
    let grid = SpatialGrid::build(points);
    let mut indices = vec![0usize; n * k];
    indices
        .par_chunks_mut(k)
        .enumerate()
        .for_each_init(Vec::new, |cand, (i, row)| {
            let q = [points[3 * i], points[3 * i + 1], points[3 * i + 2]];
            let exclude = if include_self { None } else { Some(i) };
            grid.nearest(q, k, exclude, cand);
            for (slot, &(_, j)) in row.iter_mut().zip(cand.iter()) {
                *slot = j;
            }
        });
    Ok(NeighborGraph::from_table(indices, n, k, 3))
}
