//! The drag-regression network: stacked EdgeConv layers, each rebuilding
//! its kNN graph in the current feature space, followed by a point-wise
//! embedding, a global max-pooled descriptor and a fully connected head
//! producing one scalar.

mod forward;
mod inference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Mode, RunningStats, Tensor};
use crate::knn::KnnError;
use crate::real::Real;
use crate::rng::{stream, Purpose};

pub use forward::ForwardPass;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("{n} points is too few for k = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("input must be [n, 3] or [batch, n, 3], got {0:?}")]
    BadInput(Vec<usize>),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error("parameter {0} missing or mis-shaped")]
    BadParameter(String),
}

/// Which EdgeConv outputs feed the embedding projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Concatenate every EdgeConv output (256+512+512+1024 = 2304 channels
    /// for the default widths).
    #[default]
    ConcatAll,
    /// Only the last EdgeConv output.
    LastLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegDgcnnConfig {
    pub k: usize,
    pub edgeconv_channels: Vec<usize>,
    pub embedding_dim: usize,
    pub fc_channels: Vec<usize>,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub use_batch_norm: bool,
    pub include_self: bool,
    pub input_points: usize,
    pub aggregation: Aggregation,
}

impl Default for RegDgcnnConfig {
    fn default() -> Self {
        Self {
            k: 40,
            edgeconv_channels: vec![256, 512, 512, 1024],
            embedding_dim: 512,
            fc_channels: vec![128, 64, 32, 16],
            dropout_p: 0.5,
            leaky_slope: 0.2,
            use_batch_norm: true,
            include_self: false,
            input_points: 5000,
            aggregation: Aggregation::ConcatAll,
        }
    }
}

/// Number of leading FC layers followed by dropout.
pub const DROPOUT_LAYERS: usize = 2;

impl RegDgcnnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.edgeconv_channels.is_empty() || self.edgeconv_channels.contains(&0) {
            return bad("edgeconv_channels must be non-empty and positive");
        }
        if self.fc_channels.is_empty() || self.fc_channels.contains(&0) {
            return bad("fc_channels must be non-empty and positive");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must lie in (0, 1)");
        }
        Ok(())
    }

    /// Smallest cloud the network accepts.
    pub fn min_points(&self) -> usize {
        if self.include_self {
            self.k
        } else {
            self.k + 1
        }
    }

    fn aggregated_width(&self) -> usize {
        match self.aggregation {
            Aggregation::ConcatAll => self.edgeconv_channels.iter().sum(),
            Aggregation::LastLayer => *self.edgeconv_channels.last().unwrap(),
        }
    }

    /// `(name, shape)` of every learnable tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut dense = |prefix: String, fan_in: usize, fan_out: usize, bn: bool| {
            out.push((format!("{prefix}.weight"), vec![fan_in, fan_out]));
            out.push((format!("{prefix}.bias"), vec![fan_out]));
            if bn {
                out.push((format!("{prefix}.bn.gamma"), vec![fan_out]));
                out.push((format!("{prefix}.bn.beta"), vec![fan_out]));
            }
        };
        let mut c_in = 3;
        for (l, &c_out) in self.edgeconv_channels.iter().enumerate() {
            dense(format!("edgeconv.{l}"), 2 * c_in, c_out, self.use_batch_norm);
            c_in = c_out;
        }
        dense("embedding".into(), self.aggregated_width(), self.embedding_dim, self.use_batch_norm);
        let mut prev = self.embedding_dim;
        for (i, &c) in self.fc_channels.iter().enumerate() {
            dense(format!("fc.{i}"), prev, c, false);
            prev = c;
        }
        dense("head".into(), prev, 1, false);
        out
    }
}

/// Learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub weight: usize,
    pub bias: usize,
    /// `(gamma, beta, running-stats slot)`
    pub bn: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct RegDgcnn<T> {
    config: RegDgcnnConfig,
    params: Vec<Parameter<T>>,
    bn_stats: Vec<(String, RunningStats<T>)>,
    edgeconv: Vec<Dense>,
    embedding: Dense,
    fc: Vec<Dense>,
    head: Dense,
    mode: Mode,
}

impl<T: Real> RegDgcnn<T> {
    /// Xavier-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases, unit/zero batch-norm affine terms. Each weight matrix draws
    /// from its own seeded stream.
    pub fn init(config: RegDgcnnConfig, seed: u64) -> Result<Self, ModelError> {
        use rand::Rng;
        config.validate()?;
        let params = config
            .parameter_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let n: usize = shape.iter().product();
                let data: Vec<T> = if name.ends_with(".weight") {
                    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let mut rng = stream(seed, Purpose::Init, i as u64);
                    (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
                } else if name.ends_with(".gamma") {
                    vec![T::one(); n]
                } else {
                    vec![T::zero(); n]
                };
                Parameter {
                    name,
                    grad: Tensor::zeros(shape.clone()),
                    value: Tensor::new(shape, data).expect("shape matches"),
                }
            })
            .collect();
        Self::assemble(config, params)
    }

    /// Builds a model around existing parameter values (e.g. from a
    /// checkpoint). Names and shapes must match the configuration.
    pub fn from_parameters(config: RegDgcnnConfig, values: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != values.len() {
            return Err(ModelError::BadParameter(format!(
                "expected {} tensors, got {}",
                expected.len(),
                values.len()
            )));
        }
        let params = expected
            .into_iter()
            .zip(values)
            .map(|((name, shape), (got_name, value))| {
                if name != got_name || value.shape() != shape.as_slice() {
                    return Err(ModelError::BadParameter(got_name));
                }
                Ok(Parameter {
                    name,
                    grad: Tensor::zeros(shape),
                    value,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::assemble(config, params)
    }

    fn assemble(config: RegDgcnnConfig, params: Vec<Parameter<T>>) -> Result<Self, ModelError> {
        let index = |name: String| -> Result<usize, ModelError> {
            params
                .iter()
                .position(|p| p.name == name)
                .ok_or(ModelError::BadParameter(name))
        };
        let mut bn_stats = Vec::new();
        let mut dense = |prefix: String, width: usize| -> Result<Dense, ModelError> {
            let bn = if config.use_batch_norm && params.iter().any(|p| p.name == format!("{prefix}.bn.gamma")) {
                bn_stats.push((format!("{prefix}.bn"), RunningStats::new(width)));
                Some((
                    index(format!("{prefix}.bn.gamma"))?,
                    index(format!("{prefix}.bn.beta"))?,
                    bn_stats.len() - 1,
                ))
            } else {
                None
            };
            Ok(Dense {
                weight: index(format!("{prefix}.weight"))?,
                bias: index(format!("{prefix}.bias"))?,
                bn,
            })
        };
        let edgeconv = config
            .edgeconv_channels
            .iter()
            .enumerate()
            .map(|(l, &c)| dense(format!("edgeconv.{l}"), c))
            .collect::<Result<Vec<_>, _>>()?;
        let embedding = dense("embedding".into(), config.embedding_dim)?;
        let fc = config
            .fc_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| dense(format!("fc.{i}"), c))
            .collect::<Result<Vec<_>, _>>()?;
        let head = dense("head".into(), 1)?;
        Ok(Self {
            config,
            params,
            bn_stats,
            edgeconv,
            embedding,
            fc,
            head,
            mode: Mode::Training,
        })
    }

    pub fn config(&self) -> &RegDgcnnConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of learnable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Batch-norm running statistics, by layer name.
    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.bn_stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.bn_stats
    }
}

/// Parameter count of a configuration without building the model.
pub fn count_parameters(config: &RegDgcnnConfig) -> usize {
    config
        .parameter_shapes()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed form: every dense layer contributes `fan_in·fan_out + fan_out`
    /// plus `2·fan_out` when it is batch-normalised.
    fn closed_form(c: &RegDgcnnConfig) -> usize {
        let bn = if c.use_batch_norm { 2 } else { 0 };
        let mut total = 0;
        let mut cin = 3;
        for &co in &c.edgeconv_channels {
            total += 2 * cin * co + co + bn * co;
            cin = co;
        }
        let agg = match c.aggregation {
            Aggregation::ConcatAll => c.edgeconv_channels.iter().sum(),
            Aggregation::LastLayer => cin,
        };
        total += agg * c.embedding_dim + c.embedding_dim + bn * c.embedding_dim;
        let mut prev = c.embedding_dim;
        for &f in &c.fc_channels {
            total += prev * f + f;
            prev = f;
        }
        total + prev + 1
    }

    #[test]
    fn default_parameter_budget() {
        let on = RegDgcnnConfig::default();
        let off = RegDgcnnConfig {
            use_batch_norm: false,
            ..RegDgcnnConfig::default()
        };
        assert_eq!(count_parameters(&on), 3_101_185);
        assert_eq!(count_parameters(&off), 3_095_553);
        assert_eq!(closed_form(&on), 3_101_185);
        assert_eq!(closed_form(&off), 3_095_553);
        let model = RegDgcnn::<f32>::init(on, 0).unwrap();
        assert_eq!(model.count_parameters(), 3_101_185);
    }

    #[test]
    fn last_layer_variant_is_smaller() {
        let c = RegDgcnnConfig {
            aggregation: Aggregation::LastLayer,
            use_batch_norm: false,
            ..RegDgcnnConfig::default()
        };
        assert_eq!(count_parameters(&c), closed_form(&c));
        assert_eq!(count_parameters(&c), 3_095_553 - (2304 - 1024) * 512);
    }

    #[test]
    fn toy_count_by_hand() {
        // edgeconv 6→2 (12+2), embedding 2→3 (6+3), fc 3→1 (3+1), head 1→1 (1+1)
        let c = RegDgcnnConfig {
            k: 1,
            edgeconv_channels: vec![2],
            embedding_dim: 3,
            fc_channels: vec![1],
            use_batch_norm: false,
            ..RegDgcnnConfig::default()
        };
        assert_eq!(count_parameters(&c), 14 + 9 + 4 + 2);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = RegDgcnnConfig {
            k: 4,
            edgeconv_channels: vec![8, 8],
            embedding_dim: 16,
            fc_channels: vec![8, 4],
            ..RegDgcnnConfig::default()
        };
        let a = RegDgcnn::<f64>::init(c.clone(), 1).unwrap();
        let b = RegDgcnn::<f64>::init(c.clone(), 1).unwrap();
        let d = RegDgcnn::<f64>::init(c, 2).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), d.parameters());
        for p in a.parameters() {
            let s = p.value.shape();
            if p.name.ends_with(".weight") {
                let bound = (6.0 / (s[0] + s[1]) as f64).sqrt();
                assert!(p.value.data().iter().all(|v| v.abs() <= bound));
            } else if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
                assert!(p.value.data().iter().all(|&v| v == 0.0));
            } else {
                assert!(p.value.data().iter().all(|&v| v == 1.0));
            }
        }
        let mut names: Vec<_> = a.parameters().iter().map(|p| p.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), a.parameters().len());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            RegDgcnnConfig { k: 0, ..Default::default() },
            RegDgcnnConfig { edgeconv_channels: vec![], ..Default::default() },
            RegDgcnnConfig { fc_channels: vec![], ..Default::default() },
            RegDgcnnConfig { dropout_p: 1.0, ..Default::default() },
            RegDgcnnConfig { leaky_slope: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(RegDgcnn::<f32>::init(c, 0), Err(ModelError::InvalidConfig(_))));
        }
    }
}
