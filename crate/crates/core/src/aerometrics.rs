//! Regression metrics and aerodynamic coefficients.
//!
//! Metrics always run in `f64`, whatever precision the model used.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One drag count is a `C_d` increment of `1e-4`.
pub const DRAG_COUNT: f64 = 1e-4;

/// Freestream speed of the reference simulations, m/s.
pub const REFERENCE_FREESTREAM_SPEED: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid flow conditions: {0}")]
    InvalidFlow(&'static str),
    #[error("length mismatch: {actual} actual vs {predicted} predicted values")]
    ShapeMismatch { actual: usize, predicted: usize },
    #[error("no values to score")]
    Empty,
    #[error("R² needs at least two values")]
    TooFew,
    #[error("actual values have zero variance")]
    ZeroVariance,
    #[error("actual value {value} at index {index} is too close to zero for a relative error")]
    NearZeroActual { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConditions {
    /// Density, kg/m³.
    pub rho: f64,
    /// Freestream speed, m/s.
    pub u_inf: f64,
    /// Reference frontal area, m².
    pub a_ref: f64,
    /// Freestream static pressure, Pa.
    pub p_inf: f64,
}

impl FlowConditions {
    pub fn new(rho: f64, u_inf: f64, a_ref: f64, p_inf: f64) -> Result<Self, MetricsError> {
        let f = Self {
            rho,
            u_inf,
            a_ref,
            p_inf,
        };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(MetricsError::InvalidFlow("density must be positive"));
        }
        if !(self.u_inf > 0.0 && self.u_inf.is_finite()) {
            return Err(MetricsError::InvalidFlow("freestream speed must be positive"));
        }
        if !(self.a_ref > 0.0 && self.a_ref.is_finite()) {
            return Err(MetricsError::InvalidFlow("reference area must be positive"));
        }
        if !self.p_inf.is_finite() {
            return Err(MetricsError::InvalidFlow("freestream pressure must be finite"));
        }
        Ok(())
    }

    /// Dynamic pressure `½ρu²`.
    pub fn dynamic_pressure(&self) -> f64 {
        0.5 * self.rho * self.u_inf * self.u_inf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeroCoefficients {
    pub cd: f64,
    pub cl: f64,
    pub cl_f: f64,
    pub cl_r: f64,
    pub cm: f64,
}

/// `C_d = F_d / (½ ρ u² A_ref)`.
pub fn drag_coefficient(drag_force: f64, flow: &FlowConditions) -> Result<f64, MetricsError> {
    flow.validate()?;
    Ok(drag_force / (flow.dynamic_pressure() * flow.a_ref))
}

/// `C_p = (p − p_∞) / (½ ρ u²)`.
pub fn pressure_coefficient(pressure: f64, flow: &FlowConditions) -> Result<f64, MetricsError> {
    flow.validate()?;
    Ok((pressure - flow.p_inf) / flow.dynamic_pressure())
}

pub fn cd_to_counts(delta_cd: f64) -> f64 {
    delta_cd / DRAG_COUNT
}

pub fn counts_to_cd(counts: f64) -> f64 {
    counts * DRAG_COUNT
}

fn check(actual: &[f64], predicted: &[f64]) -> Result<(), MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::ShapeMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    let ss: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok(ss / actual.len() as f64)
}

/// `1 − SS_res / SS_tot`, with `SS_tot` taken about the mean of `actual`.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    if actual.len() < 2 {
        return Err(MetricsError::TooFew);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean of `|predicted − actual| / |actual|`, in percent.
pub fn mean_relative_error(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    if let Some((index, &value)) = actual.iter().enumerate().find(|(_, a)| a.abs() < 1e-12) {
        return Err(MetricsError::NearZeroActual { index, value });
    }
    let total: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (p - a).abs() / a.abs())
        .sum();
    Ok(100.0 * total / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flow(rho: f64, u: f64, a: f64) -> FlowConditions {
        FlowConditions::new(rho, u, a, 0.0).unwrap()
    }

    #[test]
    fn drag_examples() {
        assert_eq!(drag_coefficient(2.0, &flow(1.0, 2.0, 1.0)).unwrap(), 1.0);
        let cd = drag_coefficient(306.495, &flow(1.225, REFERENCE_FREESTREAM_SPEED, 2.0)).unwrap();
        assert!((cd - 0.278).abs() < 1e-12);
        assert_eq!(drag_coefficient(0.0, &flow(1.0, 2.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn invalid_flow() {
        assert!(FlowConditions::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(FlowConditions::new(1.0, -1.0, 1.0, 0.0).is_err());
        assert!(FlowConditions::new(1.0, 1.0, 0.0, 0.0).is_err());
        let bad = FlowConditions { rho: -1.0, u_inf: 1.0, a_ref: 1.0, p_inf: 0.0 };
        assert!(matches!(drag_coefficient(1.0, &bad), Err(MetricsError::InvalidFlow(_))));
        assert!(matches!(pressure_coefficient(1.0, &bad), Err(MetricsError::InvalidFlow(_))));
    }

    #[test]
    fn pressure_examples() {
        let f = FlowConditions::new(1.225, 30.0, 1.0, 101_325.0).unwrap();
        assert_eq!(pressure_coefficient(101_325.0, &f).unwrap(), 0.0);
        let q = f.dynamic_pressure();
        assert!((q - 551.25).abs() < 1e-9);
        assert!((pressure_coefficient(101_325.0 + q, &f).unwrap() - 1.0).abs() < 1e-12);
        assert!((pressure_coefficient(101_325.0 - 551.25, &f).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn drag_counts() {
        assert_eq!(counts_to_cd(1.0), 0.0001);
        assert!((cd_to_counts(0.0102) - 102.0).abs() < 1e-9);
        assert_eq!(counts_to_cd(102.0), 102.0 * 0.0001);
    }

    #[test]
    fn drag_scales_linearly_and_inverse_square() {
        for &u in &[5.0, 10.0, 30.0, 60.0] {
            for &f in &[1.0, 10.0, 250.0] {
                let base = drag_coefficient(f, &flow(1.2, u, 2.0)).unwrap();
                let doubled_force = drag_coefficient(2.0 * f, &flow(1.2, u, 2.0)).unwrap();
                let doubled_speed = drag_coefficient(f, &flow(1.2, 2.0 * u, 2.0)).unwrap();
                assert!((doubled_force - 2.0 * base).abs() <= 1e-12 * base);
                assert!((doubled_speed - base / 4.0).abs() <= 1e-12 * base);
            }
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mse(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(MetricsError::ShapeMismatch { .. })));
    }

    #[test]
    fn r2_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
        assert_eq!(r_squared(&a, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((r_squared(&a, &[1.0, 2.0, 4.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(r_squared(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::ZeroVariance));
        assert_eq!(r_squared(&[1.0], &[1.0]), Err(MetricsError::TooFew));
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(mean_relative_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mean_relative_error(&[1.0, 2.0], &[1.1, 1.8]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mean_relative_error(&[2.0], &[3.0]).unwrap(), 50.0);
        assert!(matches!(
            mean_relative_error(&[1.0, 0.0], &[1.0, 1.0]),
            Err(MetricsError::NearZeroActual { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn mse_zero_iff_equal(a in prop::collection::vec(-10.0f64..10.0, 1..20), i in 0usize..20, d in 1e-6f64..1.0) {
            prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
            let mut b = a.clone();
            let i = i % b.len();
            b[i] += d;
            prop_assert!(mse(&a, &b).unwrap() > 0.0);
        }

        #[test]
        fn r2_identity_and_mean(a in prop::collection::vec(-10.0f64..10.0, 2..20)) {
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            prop_assume!(a.iter().any(|x| (x - mean).abs() > 1e-9));
            prop_assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
            let constant = vec![mean; a.len()];
            prop_assert_eq!(r_squared(&a, &constant).unwrap(), 0.0);
        }
    }
}
