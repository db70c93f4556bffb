//! Fused EdgeConv node: edge features, shared linear map, optional batch
//! norm, leaky ReLU and neighbourhood max as one tape op.
//!
//! The linear map of an edge feature `[x_i, x_j − x_i]` splits into
//! `z_ij = a_i + b_j` with `a = x·(W_top − W_bot) + bias` and
//! `b = x·W_bot`, so only the two `n × c_out` terms are stored. Batch
//! statistics come from a pass over the edges, the neighbourhood max only
//! needs the extreme `b_j` per channel (normalisation and leaky ReLU are
//! monotone per channel), and the dense part of the batch-norm gradient is
//! affine in `z_ij`, so it is also accumulated edge by edge without
//! materialising an `n × k × c` tensor.

use super::tape::{Node, Op};
use super::{AutodiffError, Mode, RunningStats, Tape, Tensor, Var, BN_EPS, BN_MOMENTUM};
use crate::knn::NeighborGraph;
use crate::real::{matmul, Real};

/// Parameters of one fused EdgeConv layer.
pub struct EdgeConvSpec<'a, T> {
    /// `[2·c_in, c_out]`, rows ordered as the edge feature `[x_i, x_j − x_i]`.
    pub weight: Var,
    pub bias: Var,
    /// `(gamma, beta, running statistics)` when the layer is normalised.
    pub norm: Option<(Var, Var, &'a mut RunningStats<T>)>,
    pub slope: f64,
}

pub(crate) struct EdgeConvRecord<T> {
    x: Var,
    weight: Var,
    bias: Var,
    norm: Option<(Var, Var)>,
    /// Neighbour index within its cloud, `batch · n · k` entries.
    neighbors: Vec<u32>,
    k: usize,
    n: usize,
    c_in: usize,
    a: Vec<T>,
    b: Vec<T>,
    /// Neighbour that attains the max, per output element.
    selected: Vec<u32>,
    mean: Vec<T>,
    inv_std: Vec<T>,
    training: bool,
    slope: T,
}

fn mismatch(detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op: "edge_conv", detail }
}

/// `x · w` for `rows × c_in` input, added onto `out`.
fn project<T: Real>(x: &[T], rows: usize, c_in: usize, w: &[T], c_out: usize, out: &mut [T]) {
    matmul(rows, c_in, c_out, x, false, w, false, T::one(), out);
}

impl<T: Real> Tape<T> {
    /// `max_j leaky(bn(W·[x_i, x_j − x_i] + bias))` over each point's
    /// neighbours. `x` is `[n, c]` with one graph or `[b, n, c]` with one
    /// graph per batch item; the result has `c_out` channels. Equivalent to
    /// `edge_features`, `linear`, `batch_norm`, `leaky_relu` and
    /// `neighborhood_max_pool` in sequence, with batch statistics taken over
    /// every edge of the batch.
    pub fn edge_conv(
        &mut self,
        x: Var,
        graphs: &[NeighborGraph],
        spec: EdgeConvSpec<'_, T>,
        mode: Mode,
    ) -> Result<Var, AutodiffError> {
        if !(spec.slope > 0.0 && spec.slope < 1.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "edge_conv",
                detail: format!("slope {} outside (0, 1)", spec.slope),
            });
        }
        let xv = self.value(x);
        let (batch, n, c, batched) = match *xv.shape() {
            [n, c] => (1, n, c, false),
            [b, n, c] => (b, n, c, true),
            _ => return Err(mismatch(format!("expected rank 2 or 3, got {:?}", xv.shape()))),
        };
        if graphs.len() != batch {
            return Err(AutodiffError::GraphSizeMismatch(format!(
                "{} graphs for a batch of {batch}",
                graphs.len()
            )));
        }
        let k = graphs.first().map_or(0, NeighborGraph::k);
        for g in graphs {
            if g.n() != n || g.k() != k || k == 0 {
                return Err(AutodiffError::GraphSizeMismatch(format!(
                    "graph over {} points with k = {}, features have {n} rows (k = {k})",
                    g.n(),
                    g.k()
                )));
            }
        }
        let wv = self.value(spec.weight);
        if wv.shape().len() != 2 || wv.shape()[0] != 2 * c {
            return Err(mismatch(format!("weight {:?} for {c} input channels", wv.shape())));
        }
        let co = wv.shape()[1];
        if self.value(spec.bias).shape() != [co] {
            return Err(mismatch(format!("bias {:?} vs {co} outputs", self.value(spec.bias).shape())));
        }

        let rows = batch * n;
        let (top, bottom) = wv.data().split_at(c * co);
        let diff: Vec<T> = top.iter().zip(bottom).map(|(&p, &q)| p - q).collect();
        let mut a = Vec::with_capacity(rows * co);
        for _ in 0..rows {
            a.extend_from_slice(self.value(spec.bias).data());
        }
        project(xv.data(), rows, c, &diff, co, &mut a);
        let mut b = vec![T::zero(); rows * co];
        project(xv.data(), rows, c, bottom, co, &mut b);
        let neighbors: Vec<u32> = graphs
            .iter()
            .flat_map(|g| g.indices().iter().map(|&j| j as u32))
            .collect();

        let training = mode == Mode::Training;
        if let Some((gamma, beta, stats)) = &spec.norm {
            for (name, p) in [("gamma", *gamma), ("beta", *beta)] {
                if self.value(p).shape() != [co] {
                    return Err(mismatch(format!("{name} {:?} vs {co} channels", self.value(p).shape())));
                }
            }
            if stats.mean.len() != co || stats.var.len() != co {
                return Err(mismatch(format!("running stats for {} channels, output has {co}", stats.mean.len())));
            }
            if training && rows * k < 2 {
                return Err(AutodiffError::BatchTooSmall);
            }
        }
        let affine = spec
            .norm
            .as_ref()
            .map(|(g, be, _)| (self.value(*g).data().to_vec(), self.value(*be).data().to_vec()));
        let descending: Vec<bool> = (0..co)
            .map(|ch| affine.as_ref().is_some_and(|(g, _)| g[ch] < T::zero()))
            .collect();

        // Extreme neighbour term per channel, plus the edge sum of z for the
        // batch mean.
        let mut selected = vec![0u32; rows * co];
        let mut extreme = vec![T::zero(); rows * co];
        let mut z_sum = vec![T::zero(); co];
        let (mut hv, mut lv) = (vec![T::zero(); co], vec![T::zero(); co]);
        let (mut hj, mut lj) = (vec![0u32; co], vec![0u32; co]);
        let mut sb = vec![T::zero(); co];
        let kt = T::of(k as f64);
        for r in 0..rows {
            let base = (r / n) * n;
            let nbrs = &neighbors[r * k..(r + 1) * k];
            let brow = |j: u32| &b[(base + j as usize) * co..(base + j as usize + 1) * co];
            hv.copy_from_slice(brow(nbrs[0]));
            lv.copy_from_slice(brow(nbrs[0]));
            sb.copy_from_slice(brow(nbrs[0]));
            hj.fill(nbrs[0]);
            lj.fill(nbrs[0]);
            for &j in &nbrs[1..] {
                let bj = brow(j);
                for (((((h, l), hi), li), s), &v) in hv
                    .iter_mut()
                    .zip(lv.iter_mut())
                    .zip(hj.iter_mut())
                    .zip(lj.iter_mut())
                    .zip(sb.iter_mut())
                    .zip(bj)
                {
                    if v > *h {
                        *h = v;
                        *hi = j;
                    }
                    if v < *l {
                        *l = v;
                        *li = j;
                    }
                    *s = *s + v;
                }
            }
            let arow = &a[r * co..(r + 1) * co];
            for ((t, &av), &sv) in z_sum.iter_mut().zip(arow).zip(&sb) {
                *t = *t + kt * av + sv;
            }
            for ch in 0..co {
                let (v, j) = if descending[ch] { (lv[ch], lj[ch]) } else { (hv[ch], hj[ch]) };
                extreme[r * co + ch] = v;
                selected[r * co + ch] = j;
            }
        }

        let (norm, mean, inv_std) = match spec.norm {
            Some((gamma, beta, stats)) => {
                let (mean, var) = if training {
                    let count = T::of((rows * k) as f64);
                    let mean: Vec<T> = z_sum.iter().map(|&t| t / count).collect();
                    let var = edge_variance(&a, &b, &neighbors, n, k, &mean);
                    let mom = T::of(BN_MOMENTUM);
                    let unbias = count / (count - T::one());
                    for ch in 0..co {
                        stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                        stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * var[ch] * unbias;
                    }
                    (mean, var)
                } else {
                    (stats.mean.clone(), stats.var.clone())
                };
                let eps = T::of(BN_EPS);
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (Some((gamma, beta)), mean, inv_std)
            }
            None => (None, vec![T::zero(); co], vec![T::one(); co]),
        };

        let slope = T::of(spec.slope);
        let mut out = vec![T::zero(); rows * co];
        for (r, orow) in out.chunks_exact_mut(co).enumerate() {
            for ch in 0..co {
                let e = r * co + ch;
                let xhat = (a[e] + extreme[e] - mean[ch]) * inv_std[ch];
                let u = match &affine {
                    Some((g, be)) => g[ch] * xhat + be[ch],
                    None => xhat,
                };
                orow[ch] = if u >= T::zero() { u } else { slope * u };
            }
        }
        let shape = if batched { vec![batch, n, co] } else { vec![n, co] };
        let value = Tensor::new(shape, out)?;
        let record = EdgeConvRecord {
            x,
            weight: spec.weight,
            bias: spec.bias,
            norm,
            neighbors,
            k,
            n,
            c_in: c,
            a,
            b,
            selected,
            mean,
            inv_std,
            training: training && norm.is_some(),
            slope,
        };
        self.push("edge_conv", value, Op::EdgeConv(Box::new(record)))
    }
}

/// Biased variance of `z_ij = a_i + b_j` over every edge.
fn edge_variance<T: Real>(a: &[T], b: &[T], neighbors: &[u32], n: usize, k: usize, mean: &[T]) -> Vec<T> {
    let co = mean.len();
    let rows = a.len() / co;
    let mut var = vec![T::zero(); co];
    let mut centred = vec![T::zero(); co];
    for r in 0..rows {
        let base = (r / n) * n;
        for ((c, &av), &m) in centred.iter_mut().zip(&a[r * co..(r + 1) * co]).zip(mean) {
            *c = av - m;
        }
        for &j in &neighbors[r * k..(r + 1) * k] {
            let bj = &b[(base + j as usize) * co..(base + j as usize + 1) * co];
            for ((s, &c), &bv) in var.iter_mut().zip(&centred).zip(bj) {
                let d = c + bv;
                *s = *s + d * d;
            }
        }
    }
    let count = T::of((rows * k) as f64);
    var.iter_mut().for_each(|s| *s = *s / count);
    var
}

fn accum<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()])
}

pub(crate) fn backward<T: Real>(r: &EdgeConvRecord<T>, g: &[T], nodes: &[Node<T>], grads: &mut [Option<Vec<T>>]) {
    let (n, k, c) = (r.n, r.k, r.c_in);
    let co = r.mean.len();
    let rows = r.a.len() / co;
    let affine = r
        .norm
        .map(|(gm, be)| (nodes[gm.0].value.data().to_vec(), nodes[be.0].value.data().to_vec()));
    let bq = |row: usize, j: u32, ch: usize| r.b[((row / n) * n + j as usize) * co + ch];

    let mut da = vec![T::zero(); rows * co];
    let mut db = vec![T::zero(); rows * co];
    let mut g_gamma = vec![T::zero(); co];
    let mut g_beta = vec![T::zero(); co];
    let mut s1 = vec![T::zero(); co];
    let mut s2 = vec![T::zero(); co];
    for row in 0..rows {
        for ch in 0..co {
            let e = row * co + ch;
            let j = r.selected[e];
            let xhat = (r.a[e] + bq(row, j, ch) - r.mean[ch]) * r.inv_std[ch];
            let u = affine.as_ref().map_or(xhat, |(gm, be)| gm[ch] * xhat + be[ch]);
            let du = if u > T::zero() { g[e] } else { r.slope * g[e] };
            let dxhat = match &affine {
                Some((gm, _)) => {
                    g_gamma[ch] = g_gamma[ch] + du * xhat;
                    g_beta[ch] = g_beta[ch] + du;
                    du * gm[ch]
                }
                None => du,
            };
            s1[ch] = s1[ch] + dxhat;
            s2[ch] = s2[ch] + dxhat * xhat;
            let dz = dxhat * r.inv_std[ch];
            da[e] = da[e] + dz;
            let target = ((row / n) * n + j as usize) * co + ch;
            db[target] = db[target] + dz;
        }
    }
    if r.training {
        // d z_ij gains -inv/N·(S1 + xhat_ij·S2), affine in z_ij.
        let count = T::of((rows * k) as f64);
        let slope_z: Vec<T> = (0..co).map(|ch| -r.inv_std[ch] * r.inv_std[ch] * s2[ch] / count).collect();
        let offset: Vec<T> = (0..co)
            .map(|ch| -r.inv_std[ch] / count * (s1[ch] - r.mean[ch] * r.inv_std[ch] * s2[ch]))
            .collect();
        let mut row_term = vec![T::zero(); co];
        let mut edge = vec![T::zero(); co];
        for row in 0..rows {
            let base = (row / n) * n;
            for (((t, &o), &s), &av) in row_term.iter_mut().zip(&offset).zip(&slope_z).zip(&r.a[row * co..(row + 1) * co]) {
                *t = o + s * av;
            }
            for &j in &r.neighbors[row * k..(row + 1) * k] {
                let jr = base + j as usize;
                for (((e, &t), &s), &bv) in edge.iter_mut().zip(&row_term).zip(&slope_z).zip(&r.b[jr * co..(jr + 1) * co]) {
                    *e = t + s * bv;
                }
                for (d, &v) in da[row * co..(row + 1) * co].iter_mut().zip(&edge) {
                    *d = *d + v;
                }
                for (d, &v) in db[jr * co..(jr + 1) * co].iter_mut().zip(&edge) {
                    *d = *d + v;
                }
            }
        }
    }
    if let Some((gm, be)) = r.norm {
        for (s, &v) in accum(grads, nodes, gm).iter_mut().zip(&g_gamma) {
            *s = *s + v;
        }
        for (s, &v) in accum(grads, nodes, be).iter_mut().zip(&g_beta) {
            *s = *s + v;
        }
    }
    let gb = accum(grads, nodes, r.bias);
    for rowv in da.chunks_exact(co) {
        for (s, &v) in gb.iter_mut().zip(rowv) {
            *s = *s + v;
        }
    }

    let xv = nodes[r.x.0].value.data();
    let w = nodes[r.weight.0].value.data();
    let (top, bottom) = w.split_at(c * co);
    let diff: Vec<T> = top.iter().zip(bottom).map(|(&p, &q)| p - q).collect();
    let gw = accum(grads, nodes, r.weight);
    let (gw_top, gw_bottom) = gw.split_at_mut(c * co);
    // a = x·(W_top − W_bot) + bias, b = x·W_bot
    matmul(c, rows, co, xv, true, &da, false, T::one(), gw_top);
    let db_minus_da: Vec<T> = db.iter().zip(&da).map(|(&p, &q)| p - q).collect();
    matmul(c, rows, co, xv, true, &db_minus_da, false, T::one(), gw_bottom);
    let gx = accum(grads, nodes, r.x);
    matmul(rows, co, c, &da, false, &diff, true, T::one(), gx);
    matmul(rows, co, c, &db, false, bottom, true, T::one(), gx);
}
