//! Forward and backward rules.

use rand::Rng;

use super::tape::{Node, Op};
use super::{AutodiffError, Mode, RunningStats, Tape, Tensor, Var, BN_EPS, BN_MOMENTUM};
use crate::knn::NeighborGraph;
use crate::real::{matmul, Real};

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn accum<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()])
}

impl<T: Real> Tape<T> {
    /// `x · w + b` along the last axis: `[..., c_in] × [c_in, c_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.shape().is_empty() || xv.channels() != wv.shape()[0] {
            return Err(mismatch(
                "pointwise_linear",
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (rows, cin, cout) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut out = vec![T::zero(); rows * cout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [cout] {
                return Err(mismatch("pointwise_linear", format!("bias {:?} vs {cout} outputs", bv.shape())));
            }
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bv.data());
            }
        }
        matmul(rows, cin, cout, xv.data(), false, wv.data(), false, T::one(), &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let value = Tensor::new(shape, out)?;
        self.push("pointwise_linear", value, Op::Linear { x, w, b })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "leaky_relu",
                detail: format!("slope {slope} outside (0, 1)"),
            });
        }
        let s = T::of(slope);
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v >= T::zero() { v } else { s * v }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("leaky_relu", value, Op::LeakyRelu { x, slope: s })
    }

    /// Per-channel normalisation over every axis but the last.
    ///
    /// Training uses biased batch statistics and updates `stats` with
    /// momentum [`BN_MOMENTUM`] (the running variance uses the unbiased
    /// estimate); inference uses `stats` as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        stats: &mut RunningStats<T>,
        mode: Mode,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.channels());
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if let Some(p) = p {
                if self.value(p).shape() != [c] {
                    return Err(mismatch("batch_norm", format!("{name} {:?} vs {c} channels", self.value(p).shape())));
                }
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(mismatch("batch_norm", format!("running stats for {} channels, input has {c}", stats.mean.len())));
        }
        let eps = T::of(BN_EPS);
        let (mean, var) = match mode {
            Mode::Training => {
                if rows < 2 {
                    return Err(AutodiffError::BatchTooSmall);
                }
                let n = T::of(rows as f64);
                let mut mean = vec![T::zero(); c];
                for row in xv.data().chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m = *m + v;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / n);
                let mut var = vec![T::zero(); c];
                for row in xv.data().chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s = *s + (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / n);
                let mom = T::of(BN_MOMENTUM);
                let unbias = n / (n - T::one());
                for ch in 0..c {
                    stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                    stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Inference => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(c) {
            for ch in 0..c {
                xhat.push((row[ch] - mean[ch]) * inv_std[ch]);
            }
        }
        let g = gamma.map(|g| self.value(g).data().to_vec());
        let b = beta.map(|b| self.value(b).data().to_vec());
        let out: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let ch = i % c;
                let scaled = g.as_ref().map_or(h, |g| g[ch] * h);
                b.as_ref().map_or(scaled, |b| scaled + b[ch])
            })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            "batch_norm",
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training: mode == Mode::Training,
            },
        )
    }

    fn max_axis(&mut self, name: &'static str, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let rank = xv.shape().len();
        if rank < 2 || xv.shape()[rank - 2] == 0 {
            return Err(mismatch(name, format!("needs [..., m >= 1, c], got {:?}", xv.shape())));
        }
        let (m, c) = (xv.shape()[rank - 2], xv.shape()[rank - 1]);
        let outer = xv.len() / (m * c);
        let mut out = Vec::with_capacity(outer * c);
        let mut argmax = Vec::with_capacity(outer * c);
        for o in 0..outer {
            let block = &xv.data()[o * m * c..(o + 1) * m * c];
            for ch in 0..c {
                let mut best = block[ch];
                let mut at = 0u32;
                for j in 1..m {
                    let v = block[j * c + ch];
                    if v > best {
                        best = v;
                        at = j as u32;
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(rank - 2);
        let value = Tensor::new(shape, out)?;
        self.push(name, value, Op::MaxAxis { x, argmax })
    }

    /// `[..., k, c] → [..., c]`: max over each point's neighbourhood.
    pub fn neighborhood_max_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.max_axis("neighborhood_max_pool", x)
    }

    /// `[..., n, c] → [..., c]`: max over all points.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.max_axis("global_max_pool", x)
    }

    /// Inverted dropout: in training each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R, mode: Mode) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument {
                op: "dropout",
                detail: format!("p = {p} outside [0, 1)"),
            });
        }
        let xv = self.value(x);
        if mode == Mode::Inference || p == 0.0 {
            let value = xv.clone();
            return self.push("dropout", value, Op::Dropout { x, mask: None });
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("dropout", value, Op::Dropout { x, mask: Some(mask) })
    }

    /// Concatenation along the last axis, in argument order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = inputs.first() else {
            return Err(mismatch("concat_channels", "no inputs".into()));
        };
        let lead = self.value(first).shape()[..self.value(first).shape().len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.value(v).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(mismatch("concat_channels", format!("{s:?} vs leading {lead:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        self.push("concat_channels", value, Op::Concat { inputs: inputs.to_vec() })
    }

    /// Edge features `[x_i, x_j − x_i]` for every neighbour `j` of `i`.
    ///
    /// `x` is `[n, c]` with one graph or `[b, n, c]` with one graph per
    /// batch item; the result is `[(b,) n, k, 2c]`.
    pub fn edge_features(&mut self, x: Var, graphs: &[NeighborGraph]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let (batch, n, c, batched) = match *xv.shape() {
            [n, c] => (1, n, c, false),
            [b, n, c] => (b, n, c, true),
            _ => return Err(mismatch("edge_features", format!("expected rank 2 or 3, got {:?}", xv.shape()))),
        };
        if graphs.len() != batch {
            return Err(AutodiffError::GraphSizeMismatch(format!(
                "{} graphs for a batch of {batch}",
                graphs.len()
            )));
        }
        let k = graphs.first().map_or(0, NeighborGraph::k);
        for g in graphs {
            if g.n() != n || g.k() != k {
                return Err(AutodiffError::GraphSizeMismatch(format!(
                    "graph over {} points with k = {}, features have {n} rows (k = {k})",
                    g.n(),
                    g.k()
                )));
            }
        }
        let mut out = Vec::with_capacity(batch * n * k * 2 * c);
        let mut neighbors = Vec::with_capacity(batch * n * k);
        for (b, g) in graphs.iter().enumerate() {
            let feats = &xv.data()[b * n * c..(b + 1) * n * c];
            for i in 0..n {
                let xi = &feats[i * c..(i + 1) * c];
                for &j in g.row(i) {
                    let xj = &feats[j * c..(j + 1) * c];
                    out.extend_from_slice(xi);
                    out.extend(xj.iter().zip(xi).map(|(&a, &b)| a - b));
                    neighbors.push(j);
                }
            }
        }
        let shape = if batched { vec![batch, n, k, 2 * c] } else { vec![n, k, 2 * c] };
        let value = Tensor::new(shape, out)?;
        self.push("edge_features", value, Op::EdgeFeatures { x, neighbors, k })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("add", value, Op::Add { a, b })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push("sum", Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean squared error against constant targets (compared element-wise,
    /// so a `[b, 1]` prediction pairs with `b` targets).
    pub fn mse_loss(&mut self, pred: Var, target: &[T]) -> Result<Var, AutodiffError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(mismatch("mse_loss", format!("{} predictions vs {} targets", pv.len(), target.len())));
        }
        let m = T::of(target.len() as f64);
        let s = pv
            .data()
            .iter()
            .zip(target)
            .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
        self.push(
            "mse_loss",
            Tensor::scalar(s / m),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        )
    }

    pub(crate) fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        match &nodes[idx].op {
            Op::Leaf => {}
            &Op::Linear { x, w, b } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (rows, cin, cout) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                matmul(rows, cout, cin, g, false, wv.data(), true, T::one(), accum(grads, nodes, x));
                matmul(cin, rows, cout, xv.data(), true, g, false, T::one(), accum(grads, nodes, w));
                if let Some(b) = b {
                    let gb = accum(grads, nodes, b);
                    for row in g.chunks_exact(cout) {
                        for (s, &v) in gb.iter_mut().zip(row) {
                            *s = *s + v;
                        }
                    }
                }
            }
            &Op::LeakyRelu { x, slope } => {
                let xv = nodes[x.0].value.data();
                let gx = accum(grads, nodes, x);
                for ((s, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *s = *s + if xi > T::zero() { gi } else { slope * gi };
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let gam: Vec<T> = gamma.map_or_else(|| vec![T::one(); c], |gv| nodes[gv.0].value.data().to_vec());
                if let Some(gv) = *gamma {
                    let gg = accum(grads, nodes, gv);
                    for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                        gg[i % c] = gg[i % c] + gi * h;
                    }
                }
                if let Some(bv) = *beta {
                    let gb = accum(grads, nodes, bv);
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % c] = gb[i % c] + gi;
                    }
                }
                let gx = accum(grads, nodes, *x);
                if *training {
                    let n = T::of(rows as f64);
                    let mut sum_d = vec![T::zero(); c];
                    let mut sum_dh = vec![T::zero(); c];
                    for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                        let d = gi * gam[i % c];
                        sum_d[i % c] = sum_d[i % c] + d;
                        sum_dh[i % c] = sum_dh[i % c] + d * h;
                    }
                    for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                        let ch = i % c;
                        let d = gi * gam[ch];
                        gx[i] = gx[i] + inv_std[ch] / n * (n * d - sum_d[ch] - h * sum_dh[ch]);
                    }
                } else {
                    for (i, &gi) in g.iter().enumerate() {
                        gx[i] = gx[i] + gi * gam[i % c] * inv_std[i % c];
                    }
                }
            }
            Op::MaxAxis { x, argmax } => {
                let s = nodes[x.0].value.shape();
                let (m, c) = (s[s.len() - 2], s[s.len() - 1]);
                let gx = accum(grads, nodes, *x);
                for (o, (&gi, &a)) in g.iter().zip(argmax).enumerate() {
                    let (outer, ch) = (o / c, o % c);
                    let at = outer * m * c + a as usize * c + ch;
                    gx[at] = gx[at] + gi;
                }
            }
            Op::Dropout { x, mask } => {
                let gx = accum(grads, nodes, *x);
                match mask {
                    Some(mask) => {
                        for ((s, &gi), &mi) in gx.iter_mut().zip(g).zip(mask) {
                            *s = *s + gi * mi;
                        }
                    }
                    None => {
                        for (s, &gi) in gx.iter_mut().zip(g) {
                            *s = *s + gi;
                        }
                    }
                }
            }
            Op::Concat { inputs } => {
                let widths: Vec<usize> = inputs.iter().map(|v| nodes[v.0].value.channels()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for (&v, &w) in inputs.iter().zip(&widths) {
                    let gv = accum(grads, nodes, v);
                    for r in 0..rows {
                        for j in 0..w {
                            gv[r * w + j] = gv[r * w + j] + g[r * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::EdgeFeatures { x, neighbors, k } => {
                let s = nodes[x.0].value.shape();
                let (n, c) = (s[s.len() - 2], s[s.len() - 1]);
                let k = *k;
                let gx = accum(grads, nodes, *x);
                for (slot, &j) in neighbors.iter().enumerate() {
                    let (b, i) = (slot / (n * k), (slot / k) % n);
                    let ge = &g[slot * 2 * c..(slot + 1) * 2 * c];
                    let (gi_base, gj_base) = ((b * n + i) * c, (b * n + j) * c);
                    for ch in 0..c {
                        gx[gi_base + ch] = gx[gi_base + ch] + ge[ch] - ge[c + ch];
                        gx[gj_base + ch] = gx[gj_base + ch] + ge[c + ch];
                    }
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    let gv = accum(grads, nodes, v);
                    for (s, &gi) in gv.iter_mut().zip(g) {
                        *s = *s + gi;
                    }
                }
            }
            &Op::Sum { x } => {
                let gx = accum(grads, nodes, x);
                for s in gx.iter_mut() {
                    *s = *s + g[0];
                }
            }
            Op::Mse { pred, target } => {
                let pv = nodes[pred.0].value.data();
                let scale = T::of(2.0) / T::of(target.len() as f64) * g[0];
                let gp = accum(grads, nodes, *pred);
                for ((s, &p), &t) in gp.iter_mut().zip(pv).zip(target) {
                    *s = *s + scale * (p - t);
                }
            }
            Op::EdgeConv(record) => super::edge_conv::backward(record, g, nodes, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::knn_graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central finite differences of `f` with respect to each entry of each
    /// input, compared with the tape gradient. Returns the worst relative
    /// error `|fd - ad| / max(|fd|, |ad|, 1e-8)`.
    fn fd_check(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let eval = |perturbed: &[Tensor<f64>]| {
            let mut tp = Tape::new();
            let vs: Vec<Var> = perturbed.iter().map(|x| tp.leaf(x.clone())).collect();
            let l = f(&mut tp, &vs);
            tp.value(l).data()[0]
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (a, input) in inputs.iter().enumerate() {
            let ad = grads.get_or_zeros(vars[a], &tape);
            for i in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[a].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[a].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = ad.data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        worst
    }

    fn target_for(len: usize, seed: u64) -> Vec<f64> {
        random(&[len], seed).into_data()
    }

    #[test]
    fn linear_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1., 0., 0., 1.]));
        let w = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.leaf(t(&[2], &[0., 0.]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);

        let x0 = tape.leaf(Tensor::zeros(vec![3, 2]));
        let w1 = tape.leaf(t(&[2, 1], &[7., -3.]));
        let b5 = tape.leaf(t(&[1], &[5.]));
        let y = tape.linear(x0, w1, Some(b5)).unwrap();
        assert_eq!(tape.value(y).data(), &[5., 5., 5.]);

        let bad = tape.leaf(Tensor::zeros(vec![3, 3]));
        assert!(matches!(tape.linear(bad, w, None), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn linear_weight_gradient_of_sum_is_column_sums() {
        let x = random(&[4, 3], 1);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let w = tape.leaf(random(&[3, 2], 2));
        let y = tape.linear(xv, w, None).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        let gw = g.get(w).unwrap();
        for i in 0..3 {
            let col: f64 = (0..4).map(|r| x.data()[r * 3 + i]).sum();
            for j in 0..2 {
                assert!((gw.data()[i * 2 + j] - col).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_fd() {
        let err = fd_check(&[random(&[2, 5, 3], 3), random(&[3, 4], 4), random(&[4], 5)], &|tp, v| {
            let y = tp.linear(v[0], v[1], Some(v[2])).unwrap();
            tp.mse_loss(y, &target_for(40, 6)).unwrap()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn leaky_relu_examples_and_fd() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 3.0, 0.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.2, 3.0, 0.0]);
        // subgradient at exactly zero is the negative slope
        let s = tape.sum(y).unwrap();
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[0.2, 1.0, 0.2]);
        assert!(tape.leaky_relu(x, 1.5).is_err());

        let mut x = random(&[30], 7);
        for v in x.data_mut() {
            if v.abs() < 1e-3 {
                *v += 0.01;
            }
        }
        let err = fd_check(&[x], &|tp, v| {
            let y = tp.leaky_relu(v[0], 0.2).unwrap();
            tp.mse_loss(y, &target_for(30, 8)).unwrap()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn batch_norm_training_normalizes() {
        // channel 0: mean 0, var 1 ; channel 1: same
        let x = t(&[4, 2], &[1., -1., -1., 1., 1., 1., -1., -1.]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let mut stats = RunningStats::new(2);
        let y = tape.batch_norm(xv, None, None, &mut stats, Mode::Training).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (o, i) in tape.value(y).data().iter().zip(x.data()) {
            assert!((o - i * scale).abs() < 1e-12);
        }
        // running stats moved 10% toward (0, 4/3)
        assert!((stats.mean[0] - 0.0).abs() < 1e-15);
        assert!((stats.var[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_inference_hand_numbers() {
        let mut stats = RunningStats { mean: vec![2.0, -1.0], var: vec![4.0, 0.25] };
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[3.0, 0.0]));
        let g = tape.leaf(t(&[2], &[2.0, 0.5]));
        let b = tape.leaf(t(&[2], &[0.1, -0.1]));
        let y = tape.batch_norm(x, Some(g), Some(b), &mut stats, Mode::Inference).unwrap();
        let e0 = (3.0 - 2.0) / (4.0 + BN_EPS).sqrt() * 2.0 + 0.1;
        let e1 = (0.0 + 1.0) / (0.25 + BN_EPS).sqrt() * 0.5 - 0.1;
        assert!((tape.value(y).data()[0] - e0).abs() < 1e-12);
        assert!((tape.value(y).data()[1] - e1).abs() < 1e-12);
        assert_eq!(stats.mean, vec![2.0, -1.0]);
    }

    #[test]
    fn batch_norm_rejects_single_row_training() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[1., 2., 3.]));
        let mut stats = RunningStats::new(3);
        assert_eq!(
            tape.batch_norm(x, None, None, &mut stats, Mode::Training),
            Err(AutodiffError::BatchTooSmall)
        );
        assert!(tape.batch_norm(x, None, None, &mut stats, Mode::Inference).is_ok());
    }

    #[test]
    fn batch_norm_fd() {
        for mode in [Mode::Training, Mode::Inference] {
            let err = fd_check(&[random(&[4, 3], 9), random(&[3], 10), random(&[3], 11)], &|tp, v| {
                let mut stats = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
                let y = tp.batch_norm(v[0], Some(v[1]), Some(v[2]), &mut stats, mode).unwrap();
                tp.mse_loss(y, &target_for(12, 12)).unwrap()
            });
            assert!(err < 1e-5, "{mode:?}: rel err {err}");
        }
    }

    #[test]
    fn neighborhood_max_pool_examples() {
        let mut tape = Tape::new();
        let h = tape.leaf(t(&[2, 2, 1], &[1., 5., 3., 2.]));
        let y = tape.neighborhood_max_pool(h).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1]);
        assert_eq!(tape.value(y).data(), &[5., 3.]);

        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::full(vec![1, 3, 1], 4.0));
        let y = tape.neighborhood_max_pool(h).unwrap();
        let s = tape.sum(y).unwrap();
        assert_eq!(tape.backward(s).unwrap().get(h).unwrap().data(), &[1., 0., 0.]);
    }

    #[test]
    fn max_pool_fd() {
        let err = fd_check(&[random(&[3, 4, 2], 13)], &|tp, v| {
            let y = tp.neighborhood_max_pool(v[0]).unwrap();
            tp.mse_loss(y, &target_for(6, 14)).unwrap()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn global_max_pool_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1., 5., 3., 2.]));
        let y = tape.global_max_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 5.]);
        let permuted = tape.leaf(t(&[2, 2], &[3., 2., 1., 5.]));
        let yp = tape.global_max_pool(permuted).unwrap();
        assert_eq!(tape.value(yp).data(), &[3., 5.]);
        let single = tape.leaf(t(&[1, 3], &[7., 8., 9.]));
        let ys = tape.global_max_pool(single).unwrap();
        assert_eq!(tape.value(ys).data(), &[7., 8., 9.]);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.leaf(random(&[100], 15));
        let y = tape.dropout(x, 0.0, &mut rng, Mode::Training).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let y = tape.dropout(x, 0.7, &mut rng, Mode::Inference).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(tape.dropout(x, 1.0, &mut rng, Mode::Training).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        // Binomial(40000, 1/2): sd = 100, 4 sd = 400
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![40_000], 1.0));
        let y = tape.dropout(x, 0.5, &mut rng, Mode::Training).unwrap();
        let kept = tape.value(y).data().iter().filter(|&&v| v != 0.0).count() as i64;
        assert!((kept - 20_000).abs() <= 400, "kept {kept}");
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_fd_with_fixed_mask() {
        let err = fd_check(&[random(&[20], 16)], &|tp, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let y = tp.dropout(v[0], 0.3, &mut rng, Mode::Training).unwrap();
            tp.mse_loss(y, &target_for(20, 17)).unwrap()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn concat_examples_and_fd() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 1], &[1., 2.]));
        let b = tape.leaf(t(&[2, 1], &[3., 4.]));
        let single = tape.concat_channels(&[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));
        let y = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 2]);
        assert_eq!(tape.value(y).data(), &[1., 3., 2., 4.]);
        let c = tape.leaf(t(&[3, 1], &[1., 2., 3.]));
        assert!(tape.concat_channels(&[a, c]).is_err());

        let err = fd_check(&[random(&[3, 2], 18), random(&[3, 4], 19)], &|tp, v| {
            let y = tp.concat_channels(&[v[0], v[1]]).unwrap();
            tp.mse_loss(y, &target_for(18, 20)).unwrap()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn mse_examples_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(&[2], &[1., 1.]));
        let same = tape.mse_loss(p, &[1., 1.]).unwrap();
        assert_eq!(tape.value(same).data(), &[0.0]);
        let l = tape.mse_loss(p, &[0., 0.]).unwrap();
        assert_eq!(tape.value(l).data(), &[1.0]);
        assert_eq!(tape.backward(l).unwrap().get(p).unwrap().data(), &[1.0, 1.0]);
        assert!(tape.mse_loss(p, &[1.0]).is_err());

        let err = fd_check(&[random(&[5], 21)], &|tp, v| tp.mse_loss(v[0], &target_for(5, 22)).unwrap());
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn edge_features_examples() {
        let mut tape = Tape::new();
        let pts = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let g = knn_graph(&pts, 3, 1, false).unwrap();
        let x = tape.leaf(t(&[2, 3], &pts));
        let e = tape.edge_features(x, &[g]).unwrap();
        assert_eq!(tape.value(e).shape(), &[2, 1, 6]);
        assert_eq!(tape.value(e).data(), &[0., 0., 0., 1., 0., 0., 1., 0., 0., -1., 0., 0.]);

        let g3 = knn_graph(&[0.0, 1.0, 2.0], 1, 1, false).unwrap();
        assert!(matches!(tape.edge_features(x, &[g3]), Err(AutodiffError::GraphSizeMismatch(_))));
    }

    #[test]
    fn edge_features_self_slot_is_zero() {
        let x = random(&[10, 4], 23);
        let g = knn_graph(x.data(), 4, 3, true).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let e = tape.edge_features(xv, &[g]).unwrap();
        for i in 0..10 {
            let slot = &tape.value(e).data()[i * 3 * 8..i * 3 * 8 + 8];
            assert!(slot[4..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn edge_features_match_slot_loop() {
        let x = random(&[2, 12, 3], 24);
        let graphs: Vec<_> = (0..2)
            .map(|b| knn_graph(&x.data()[b * 36..(b + 1) * 36], 3, 4, false).unwrap())
            .collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let e = tape.edge_features(xv, &graphs).unwrap();
        let out = tape.value(e).data();
        for b in 0..2 {
            for i in 0..12 {
                for (s, &j) in graphs[b].row(i).iter().enumerate() {
                    for c in 0..3 {
                        let base = (((b * 12 + i) * 4) + s) * 6;
                        let xi = x.data()[(b * 12 + i) * 3 + c];
                        let xj = x.data()[(b * 12 + j) * 3 + c];
                        assert_eq!(out[base + c], xi);
                        assert_eq!(out[base + 3 + c], xj - xi);
                    }
                }
            }
        }
    }

    #[test]
    fn edge_features_fd_with_frozen_graph() {
        let x = random(&[8, 3], 25);
        let g = knn_graph(x.data(), 3, 3, false).unwrap();
        let err = fd_check(&[x], &|tp, v| {
            let e = tp.edge_features(v[0], &[g.clone()]).unwrap();
            tp.mse_loss(e, &target_for(8 * 3 * 6, 26)).unwrap()
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn composed_chain_fd() {
        // linear -> leaky_relu -> max pool
        let err = fd_check(&[random(&[3, 4, 2], 27), random(&[2, 3], 28), random(&[3], 29)], &|tp, v| {
            let y = tp.linear(v[0], v[1], Some(v[2])).unwrap();
            let a = tp.leaky_relu(y, 0.2).unwrap();
            let p = tp.neighborhood_max_pool(a).unwrap();
            tp.mse_loss(p, &target_for(9, 30)).unwrap()
        });
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn gradients_accumulate_over_branches() {
        let x = random(&[6, 2], 31);
        let w = random(&[2, 2], 32);
        let branch = |use_f: bool, use_g: bool| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let y = tape.linear(xv, wv, None).unwrap();
            let f = tape.mse_loss(y, &target_for(12, 33)).unwrap();
            let a = tape.leaky_relu(xv, 0.1).unwrap();
            let g = tape.mse_loss(a, &target_for(12, 34)).unwrap();
            let loss = match (use_f, use_g) {
                (true, true) => tape.add(f, g).unwrap(),
                (true, false) => f,
                _ => g,
            };
            tape.backward(loss).unwrap().get_or_zeros(xv, &tape)
        };
        let both = branch(true, true);
        let (f, g) = (branch(true, false), branch(false, true));
        for i in 0..both.len() {
            assert!((both.data()[i] - (f.data()[i] + g.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1], &[1e300]));
        let w = tape.leaf(t(&[1, 1], &[1e300]));
        assert_eq!(tape.linear(x, w, None), Err(AutodiffError::NonFinite { op: "pointwise_linear" }));
        let mut lax = Tape::without_finite_check();
        let x = lax.leaf(t(&[1, 1], &[1e300]));
        let w = lax.leaf(t(&[1, 1], &[1e300]));
        assert!(lax.linear(x, w, None).is_ok());
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut tape = Tape::new();
            let x = tape.leaf(random(&[16, 4], 35));
            let w = tape.leaf(random(&[4, 8], 36));
            let y = tape.linear(x, w, None).unwrap();
            let d = tape.dropout(y, 0.5, &mut rng, Mode::Training).unwrap();
            tape.value(d).clone()
        };
        assert_eq!(run(), run());
    }
}
