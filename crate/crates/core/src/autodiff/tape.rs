use super::{AutodiffError, Tensor};
use crate::real::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    BatchNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    /// Max over the second-to-last axis.
    MaxAxis {
        x: Var,
        argmax: Vec<u32>,
    },
    Dropout {
        x: Var,
        mask: Option<Vec<T>>,
    },
    Concat {
        inputs: Vec<Var>,
    },
    EdgeFeatures {
        x: Var,
        neighbors: Vec<usize>,
        k: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    EdgeConv(Box<super::edge_conv::EdgeConvRecord<T>>),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
}

/// Record of executed ops.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// Tape that rejects any non-finite intermediate value.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn without_finite_check() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var, AutodiffError> {
        if self.check_finite && !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be a scalar, got shape {:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar with respect to every node that influenced it.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros if `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
    }
}
