use serde::{Deserialize, Serialize};

use super::DetectorError;

/// Kernel used by the one-class SVM. The feature map is never built; points
/// only meet through `K(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Rbf {
        gamma: f64,
    },
    /// Plain inner product, kept for closed-form checks of the solver.
    Linear,
}

impl Kernel {
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => (-gamma * sq_dist(x, y)).exp(),
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-gamma * |x - y|^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64, DetectorError> {
    if x.len() != y.len() {
        return Err(DetectorError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DetectorError::BadHyperparameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(Kernel::Rbf { gamma }.eval(x, y))
}
