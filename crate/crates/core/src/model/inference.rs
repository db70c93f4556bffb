use super::{Aggregation, Dense, ModelError, RegDgcnn};
use crate::autodiff::{Tensor, BN_EPS};
use crate::knn::{knn_graph_accelerated, knn_graph_gram, NeighborGraph};
use crate::real::{matmul, Real};

/// Per-channel `scale·z + shift` equivalent of a frozen batch-norm layer.
struct Affine<T> {
    scale: Vec<T>,
    shift: Vec<T>,
}

impl<T: Real> RegDgcnn<T> {
    /// Inference-mode predictions for `[batch, n, 3]` or `[n, 3]` input,
    /// one value per cloud, independent of the model's current mode.
    ///
    /// EdgeConv layers are evaluated without materialising the
    /// `n × k × 2c` edge tensor: the linear map splits into a per-point
    /// term and a per-neighbour term, and because frozen batch norm and
    /// leaky ReLU are monotone per channel the neighbourhood max only needs
    /// the extreme neighbour term.
    pub fn predict(&self, points: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let (batch, n) = match *points.shape() {
            [n, 3] => (1, n),
            [b, n, 3] => (b, n),
            _ => return Err(ModelError::BadInput(points.shape().to_vec())),
        };
        if n < self.config.min_points() {
            return Err(ModelError::TooFewPoints { n, k: self.config.k });
        }
        points
            .data()
            .chunks_exact(n * 3)
            .take(batch)
            .map(|cloud| self.predict_cloud(cloud))
            .collect()
    }

    /// Inference-mode prediction for a single flat `n × 3` cloud.
    pub fn predict_cloud(&self, cloud: &[T]) -> Result<T, ModelError> {
        let n = cloud.len() / 3;
        if cloud.len() % 3 != 0 {
            return Err(ModelError::BadInput(vec![cloud.len()]));
        }
        if n < self.config.min_points() {
            return Err(ModelError::TooFewPoints { n, k: self.config.k });
        }
        let slope = T::of(self.config.leaky_slope);
        let leaky = |v: T| if v > T::zero() { v } else { v * slope };

        let mut x = cloud.to_vec();
        let mut c = 3;
        let mut outputs: Vec<(Vec<T>, usize)> = Vec::with_capacity(self.edgeconv.len());
        for (l, &d) in self.edgeconv.iter().enumerate() {
            let graph = if l == 0 {
                knn_graph_accelerated(&x, self.config.k, self.config.include_self)?
            } else {
                knn_graph_gram(&x, c, self.config.k, self.config.include_self)?
            };
            let co = self.config.edgeconv_channels[l];
            x = self.edgeconv_fused(&x, c, co, &graph, d, &leaky);
            c = co;
            if self.config.aggregation == Aggregation::ConcatAll {
                outputs.push((x.clone(), co));
            }
        }
        let (features, width) = match self.config.aggregation {
            Aggregation::ConcatAll => {
                let width: usize = outputs.iter().map(|o| o.1).sum();
                let mut f = Vec::with_capacity(n * width);
                for i in 0..n {
                    for (o, w) in &outputs {
                        f.extend_from_slice(&o[i * w..(i + 1) * w]);
                    }
                }
                (f, width)
            }
            Aggregation::LastLayer => (x, c),
        };
        drop(outputs);
        let emb_dim = self.config.embedding_dim;
        let mut emb = self.linear(&features, n, width, emb_dim, self.embedding);
        drop(features);
        let affine = self.affine(self.embedding, emb_dim);
        for row in emb.chunks_exact_mut(emb_dim) {
            for (ch, v) in row.iter_mut().enumerate() {
                let z = match &affine {
                    Some(a) => a.scale[ch] * *v + a.shift[ch],
                    None => *v,
                };
                *v = leaky(z);
            }
        }
        let mut h = vec![T::neg_infinity(); emb_dim];
        for row in emb.chunks_exact(emb_dim) {
            for (m, &v) in h.iter_mut().zip(row) {
                if v > *m {
                    *m = v;
                }
            }
        }
        let mut width = emb_dim;
        for (i, &d) in self.fc.iter().enumerate() {
            let co = self.config.fc_channels[i];
            h = self.linear(&h, 1, width, co, d);
            h.iter_mut().for_each(|v| *v = leaky(*v));
            width = co;
        }
        Ok(self.linear(&h, 1, width, 1, self.head)[0])
    }

    fn linear(&self, x: &[T], rows: usize, cin: usize, cout: usize, d: Dense) -> Vec<T> {
        let bias = self.params[d.bias].value.data();
        let mut out = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        matmul(rows, cin, cout, x, false, self.params[d.weight].value.data(), false, T::one(), &mut out);
        out
    }

    fn affine(&self, d: Dense, channels: usize) -> Option<Affine<T>> {
        let (gamma, beta, slot) = d.bn?;
        let stats = &self.bn_stats[slot].1;
        let (g, b) = (self.params[gamma].value.data(), self.params[beta].value.data());
        let mut scale = Vec::with_capacity(channels);
        let mut shift = Vec::with_capacity(channels);
        for ch in 0..channels {
            let s = g[ch] / (stats.var[ch] + T::of(BN_EPS)).sqrt();
            scale.push(s);
            shift.push(b[ch] - stats.mean[ch] * s);
        }
        Some(Affine { scale, shift })
    }

    fn edgeconv_fused(
        &self,
        x: &[T],
        c: usize,
        co: usize,
        graph: &NeighborGraph,
        d: Dense,
        leaky: &impl Fn(T) -> T,
    ) -> Vec<T> {
        let n = graph.n();
        let w = self.params[d.weight].value.data();
        let (top, bottom) = w.split_at(c * co);
        // z_ij = x_i·(W_top − W_bot) + b + x_j·W_bot
        let diff: Vec<T> = top.iter().zip(bottom).map(|(&a, &b)| a - b).collect();
        let bias = self.params[d.bias].value.data();
        let mut p = Vec::with_capacity(n * co);
        for _ in 0..n {
            p.extend_from_slice(bias);
        }
        matmul(n, c, co, x, false, &diff, false, T::one(), &mut p);
        let mut q = vec![T::zero(); n * co];
        matmul(n, c, co, x, false, bottom, false, T::zero(), &mut q);

        let affine = self.affine(d, co);
        let mut hi = vec![T::zero(); co];
        let mut lo = vec![T::zero(); co];
        let mut out = vec![T::zero(); n * co];
        for i in 0..n {
            let row = graph.row(i);
            hi.copy_from_slice(&q[row[0] * co..(row[0] + 1) * co]);
            lo.copy_from_slice(&hi);
            for &j in &row[1..] {
                for ((h, l), &v) in hi.iter_mut().zip(lo.iter_mut()).zip(&q[j * co..(j + 1) * co]) {
                    if v > *h {
                        *h = v;
                    }
                    if v < *l {
                        *l = v;
                    }
                }
            }
            let pi = &p[i * co..(i + 1) * co];
            let oi = &mut out[i * co..(i + 1) * co];
            for ch in 0..co {
                let z = match &affine {
                    Some(a) if a.scale[ch] < T::zero() => a.scale[ch] * (pi[ch] + lo[ch]) + a.shift[ch],
                    Some(a) => a.scale[ch] * (pi[ch] + hi[ch]) + a.shift[ch],
                    None => pi[ch] + hi[ch],
                };
                oi[ch] = leaky(z);
            }
        }
        out
    }
}
