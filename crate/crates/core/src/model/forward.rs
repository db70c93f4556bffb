use rand::Rng;

use super::{Aggregation, Dense, ModelError, RegDgcnn, DROPOUT_LAYERS};
use crate::autodiff::{EdgeConvSpec, Gradients, Mode, Tape, Tensor, Var};
use crate::knn::{knn_graph_accelerated, knn_graph_gram, NeighborGraph};
use crate::real::Real;

/// Tape handles produced by [`RegDgcnn::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[batch, 1]` predictions.
    pub output: Var,
    /// One leaf per model parameter, in storage order.
    pub params: Vec<Var>,
}

impl<T: Real> RegDgcnn<T> {
    /// Records a differentiable forward pass over `points` (`[batch, n, 3]`
    /// or `[n, 3]`) on `tape`. In training mode batch-norm layers use batch
    /// statistics and update their running estimates; dropout draws from
    /// `rng`.
    pub fn forward<R: Rng>(&mut self, tape: &mut Tape<T>, points: &Tensor<T>, rng: &mut R) -> Result<ForwardPass, ModelError> {
        let (batch, n) = match *points.shape() {
            [n, 3] => (1, n),
            [b, n, 3] => (b, n),
            _ => return Err(ModelError::BadInput(points.shape().to_vec())),
        };
        if n < self.config.min_points() {
            return Err(ModelError::TooFewPoints { n, k: self.config.k });
        }
        let mode = self.mode;
        let slope = self.config.leaky_slope;
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let input = points.clone().reshape(vec![batch, n, 3])?;
        let mut x = tape.leaf(input);

        let mut outputs = Vec::with_capacity(self.edgeconv.len());
        for l in 0..self.edgeconv.len() {
            let graphs = self.graphs(tape.value(x), l == 0)?;
            let d = self.edgeconv[l];
            let spec = EdgeConvSpec {
                weight: params[d.weight],
                bias: params[d.bias],
                norm: d
                    .bn
                    .map(|(gamma, beta, slot)| (params[gamma], params[beta], &mut self.bn_stats[slot].1)),
                slope,
            };
            x = tape.edge_conv(x, &graphs, spec, mode)?;
            outputs.push(x);
        }
        let features = match self.config.aggregation {
            Aggregation::ConcatAll => tape.concat_channels(&outputs)?,
            Aggregation::LastLayer => x,
        };
        let emb = self.dense(tape, &params, self.embedding, features, mode)?;
        let emb = tape.leaky_relu(emb, slope)?;
        let mut h = tape.global_max_pool(emb)?;
        for i in 0..self.fc.len() {
            h = self.dense(tape, &params, self.fc[i], h, mode)?;
            h = tape.leaky_relu(h, slope)?;
            if i < DROPOUT_LAYERS {
                h = tape.dropout(h, self.config.dropout_p, rng, mode)?;
            }
        }
        let output = self.dense(tape, &params, self.head, h, mode)?;
        Ok(ForwardPass { output, params })
    }

    /// Adds the gradients of a backward pass to each parameter's `grad`.
    pub fn accumulate_gradients(&mut self, pass: &ForwardPass, grads: &Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(&pass.params) {
            if let Some(g) = grads.get(v) {
                for (acc, &d) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + d;
                }
            }
        }
    }

    fn graphs(&self, x: &Tensor<T>, spatial: bool) -> Result<Vec<NeighborGraph>, ModelError> {
        let (batch, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        x.data()
            .chunks_exact(n * c)
            .take(batch)
            .map(|cloud| {
                let g = if spatial && c == 3 {
                    knn_graph_accelerated(cloud, self.config.k, self.config.include_self)?
                } else {
                    knn_graph_gram(cloud, c, self.config.k, self.config.include_self)?
                };
                Ok(g)
            })
            .collect()
    }

    fn dense(&mut self, tape: &mut Tape<T>, params: &[Var], d: Dense, x: Var, mode: Mode) -> Result<Var, ModelError> {
        let y = tape.linear(x, params[d.weight], Some(params[d.bias]))?;
        match d.bn {
            Some((gamma, beta, slot)) => {
                let stats = &mut self.bn_stats[slot].1;
                Ok(tape.batch_norm(y, Some(params[gamma]), Some(params[beta]), stats, mode)?)
            }
            None => Ok(y),
        }
    }
}
