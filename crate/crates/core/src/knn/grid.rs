use super::order;
use crate::real::{sq_dist, Real};

/// Uniform hash grid over 3-D points for exact nearest-neighbour queries.
///
/// Cell size is the bounding-box diagonal divided by `cbrt(n)`. A query
/// scans Chebyshev rings of cells around its own cell and stops once the
/// current k-th distance is strictly below the smallest possible distance to
/// any cell not yet visited, so ties can never be missed.
#[derive(Debug, Clone)]
pub struct SpatialGrid<'a, T> {
    points: &'a [T],
    min: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a, T: Real> SpatialGrid<'a, T> {
    pub fn build(points: &'a [T]) -> Self {
        assert!(points.len() % 3 == 0);
        let n = points.len() / 3;
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points.chunks_exact(3) {
            for a in 0..3 {
                let v = p[a].f64();
                min[a] = min[a].min(v);
                max[a] = max[a].max(v);
            }
        }
        let diag = (0..3)
            .map(|a| (max[a] - min[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        let cell = if n > 0 && diag > 0.0 && diag.is_finite() {
            diag / (n as f64).cbrt()
        } else {
            f64::INFINITY
        };
        let mut dims = [1usize; 3];
        if cell.is_finite() {
            for a in 0..3 {
                dims[a] = ((max[a] - min[a]) / cell).floor() as usize + 1;
            }
        }
        let mut grid = Self {
            points,
            min,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let cells = dims[0] * dims[1] * dims[2];
        let ids: Vec<usize> = (0..n).map(|i| grid.flat(grid.cell_of(&points[3 * i..3 * i + 3]))).collect();
        let mut starts = vec![0usize; cells + 1];
        for &c in &ids {
            starts[c + 1] += 1;
        }
        for c in 0..cells {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut order = vec![0usize; n];
        for (i, &c) in ids.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = starts;
        grid.order = order;
        grid
    }

    fn cell_of(&self, p: &[T]) -> [usize; 3] {
        let mut c = [0usize; 3];
        if self.cell.is_finite() {
            for a in 0..3 {
                let f = ((p[a].f64() - self.min[a]) / self.cell).floor();
                c[a] = if f <= 0.0 {
                    0
                } else {
                    (f as usize).min(self.dims[a] - 1)
                };
            }
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Writes the `k` nearest points to `query` into `out`, sorted by
    /// `(squared distance, index)`. `exclude` skips one point index.
    pub fn nearest(&self, query: [T; 3], k: usize, exclude: Option<usize>, out: &mut Vec<(T, usize)>) {
        out.clear();
        if k == 0 || self.order.is_empty() {
            return;
        }
        let qc = self.cell_of(&query);
        let q64 = [query[0].f64(), query[1].f64(), query[2].f64()];
        let max_ring = (0..3)
            .map(|a| qc[a].max(self.dims[a] - 1 - qc[a]))
            .max()
            .unwrap_or(0);
        let margin = 1.0 - 64.0 * T::epsilon().f64();
        for r in 0..=max_ring {
            self.visit_ring(qc, r, |i| {
                if Some(i) == exclude {
                    return;
                }
                let p = &self.points[3 * i..3 * i + 3];
                let cand = (sq_dist(&query, p), i);
                if out.len() < k {
                    let at = out.partition_point(|e| order(e, &cand).is_lt());
                    out.insert(at, cand);
                } else if order(&cand, &out[k - 1]).is_lt() {
                    out.pop();
                    let at = out.partition_point(|e| order(e, &cand).is_lt());
                    out.insert(at, cand);
                }
            });
            if out.len() == k {
                let bound = self.unvisited_bound(q64, qc, r);
                if out[k - 1].0.f64() < bound * bound * margin {
                    return;
                }
            }
        }
    }

    /// Lower bound on the distance from `q` to any point outside the cells
    /// within Chebyshev radius `r` of `qc`.
    fn unvisited_bound(&self, q: [f64; 3], qc: [usize; 3], r: usize) -> f64 {
        let mut bound = f64::INFINITY;
        for a in 0..3 {
            if qc[a] > r {
                let edge = self.min[a] + (qc[a] - r) as f64 * self.cell;
                bound = bound.min((q[a] - edge).max(0.0));
            }
            if qc[a] + r + 1 < self.dims[a] {
                let edge = self.min[a] + (qc[a] + r + 1) as f64 * self.cell;
                bound = bound.min((edge - q[a]).max(0.0));
            }
        }
        bound
    }

    fn visit_ring(&self, qc: [usize; 3], r: usize, mut f: impl FnMut(usize)) {
        let lo = |a: usize| qc[a].saturating_sub(r);
        let hi = |a: usize| (qc[a] + r).min(self.dims[a] - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let cheb = x.abs_diff(qc[0]).max(y.abs_diff(qc[1])).max(z.abs_diff(qc[2]));
                    if cheb != r {
                        continue;
                    }
                    let c = self.flat([x, y, z]);
                    for &i in &self.order[self.starts[c]..self.starts[c + 1]] {
                        f(i);
                    }
                }
            }
        }
    }
}
