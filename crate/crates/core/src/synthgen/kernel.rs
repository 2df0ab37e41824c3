//! Base covariance functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, T2lError};

/// Discriminant of [`KernelSpec`], handy for counting and display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Constant,
    WhiteNoise,
    Linear,
    Rbf,
    RationalQuadratic,
    PeriodicSine,
}

impl KernelKind {
    /// The non-periodic bank sampled by [`super::random_expr`].
    pub const NON_PERIODIC: [KernelKind; 5] = [
        KernelKind::Constant,
        KernelKind::WhiteNoise,
        KernelKind::Linear,
        KernelKind::Rbf,
        KernelKind::RationalQuadratic,
    ];
}

/// One base kernel with its hyperparameters. Distances and length-scales are
/// in time-steps of the raw index grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Constant { variance: f64 },
    WhiteNoise { variance: f64 },
    Linear { variance: f64 },
    Rbf { length_scale: f64 },
    RationalQuadratic { length_scale: f64, alpha: f64 },
    PeriodicSine { length_scale: f64, period: f64 },
}

impl KernelSpec {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Constant { .. } => KernelKind::Constant,
            KernelSpec::WhiteNoise { .. } => KernelKind::WhiteNoise,
            KernelSpec::Linear { .. } => KernelKind::Linear,
            KernelSpec::Rbf { .. } => KernelKind::Rbf,
            KernelSpec::RationalQuadratic { .. } => KernelKind::RationalQuadratic,
            KernelSpec::PeriodicSine { .. } => KernelKind::PeriodicSine,
        }
    }

    fn params(&self) -> ([f64; 2], usize) {
        match *self {
            KernelSpec::Constant { variance }
            | KernelSpec::WhiteNoise { variance }
            | KernelSpec::Linear { variance } => ([variance, 0.0], 1),
            KernelSpec::Rbf { length_scale } => ([length_scale, 0.0], 1),
            KernelSpec::RationalQuadratic {
                length_scale,
                alpha,
            } => ([length_scale, alpha], 2),
            KernelSpec::PeriodicSine {
                length_scale,
                period,
            } => ([length_scale, period], 2),
        }
    }

    /// All hyperparameters must be strictly positive and finite.
    pub fn validate(&self) -> Result<()> {
        let (vals, len) = self.params();
        for &p in &vals[..len] {
            if !(p.is_finite() && p > 0.0) {
                return Err(T2lError::invalid(format!(
                    "kernel {:?} has non-positive or non-finite parameter {p}",
                    self.kind()
                )));
            }
        }
        Ok(())
    }

    /// Depends on `a - b` only.
    pub fn is_stationary(&self) -> bool {
        !matches!(self, KernelSpec::Linear { .. })
    }

    /// Evaluate without input validation. Callers guarantee finite inputs.
    #[inline]
    pub(crate) fn eval_raw(&self, a: f64, b: f64) -> f64 {
        match *self {
            KernelSpec::Constant { variance } => variance,
            KernelSpec::WhiteNoise { variance } => {
                if a == b {
                    variance
                } else {
                    0.0
                }
            }
            KernelSpec::Linear { variance } => variance * a * b,
            KernelSpec::Rbf { length_scale } => {
                let d = a - b;
                (-(d * d) / (2.0 * length_scale * length_scale)).exp()
            }
            KernelSpec::RationalQuadratic {
                length_scale,
                alpha,
            } => {
                let d = a - b;
                (1.0 + (d * d) / (2.0 * alpha * length_scale * length_scale)).powf(-alpha)
            }
            KernelSpec::PeriodicSine {
                length_scale,
                period,
            } => {
                let s = (PI * (a - b).abs() / period).sin();
                (-2.0 * s * s / (length_scale * length_scale)).exp()
            }
        }
    }
}

/// Evaluate `k(a, b)` for a single base kernel.
pub fn eval_kernel(spec: &KernelSpec, a: f64, b: f64) -> Result<f64> {
    spec.validate()?;
    if !a.is_finite() || !b.is_finite() {
        return Err(T2lError::invalid(format!(
            "kernel inputs must be finite, got ({a}, {b})"
        )));
    }
    Ok(spec.eval_raw(a, b))
}
