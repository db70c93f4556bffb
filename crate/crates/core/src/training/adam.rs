use super::TrainError;
use crate::model::Parameter;
use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(lens: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = lens.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        Self { m, v, t: 0 }
    }

    pub fn for_parameters(params: &[Parameter<T>]) -> Self {
        Self::new(params.iter().map(|p| p.value.len()))
    }
}

/// One bias-corrected Adam update of every parameter from its `grad`.
pub fn adam_step<T: Real>(params: &mut [Parameter<T>], state: &mut AdamState<T>, lr: f64) -> Result<(), TrainError> {
    if params.len() != state.m.len()
        || params
            .iter()
            .zip(&state.m)
            .zip(&state.v)
            .any(|((p, m), v)| p.value.len() != m.len() || p.value.len() != v.len() || p.grad.len() != m.len())
    {
        return Err(TrainError::ShapeMismatch(
            "optimizer state does not mirror the parameters".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let (value, grad) = (p.value.data_mut(), p.grad.data());
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn param(value: f64, grad: f64) -> Parameter<f64> {
        Parameter {
            name: "theta".into(),
            value: Tensor::new(vec![1], vec![value]).unwrap(),
            grad: Tensor::new(vec![1], vec![grad]).unwrap(),
        }
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = [param(1.0, 2.0)];
        let mut s = AdamState::for_parameters(&p);
        adam_step(&mut p, &mut s, 0.001).unwrap();
        assert_eq!(s.t, 1);
        let expected = 1.0 - 0.001 * 2.0 / (2.0 + 1e-8);
        assert!((p[0].value.data()[0] - expected).abs() < 1e-15);
        assert!((p[0].value.data()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = [param(0.25, 0.0), param(-3.0, 0.0)];
        let mut s = AdamState::for_parameters(&p);
        adam_step(&mut p, &mut s, 0.1).unwrap();
        assert_eq!(p[0].value.data()[0], 0.25);
        assert_eq!(p[1].value.data()[0], -3.0);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn two_steps_descend_a_quadratic() {
        let mut p = [param(1.5, 0.0)];
        let mut s = AdamState::for_parameters(&p);
        let mut f = 1.5f64.powi(2);
        for _ in 0..2 {
            let theta = p[0].value.data()[0];
            p[0].grad.data_mut()[0] = 2.0 * theta;
            adam_step(&mut p, &mut s, 0.01).unwrap();
            let next = p[0].value.data()[0].powi(2);
            assert!(next < f);
            f = next;
        }
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut p = [param(1.0, 1.0)];
        let mut s = AdamState::<f64>::new([2]);
        assert!(matches!(adam_step(&mut p, &mut s, 0.1), Err(TrainError::ShapeMismatch(_))));
    }
}
