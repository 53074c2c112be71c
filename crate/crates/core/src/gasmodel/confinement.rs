use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User-supplied confinement: value and gradient callables.
#[derive(Clone)]
pub struct CustomPotential {
    pub name: String,
    value: Arc<ScalarFn>,
    gradient: Arc<GradientFn>,
}

impl CustomPotential {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        CustomPotential {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomPotential({})", self.name)
    }
}

impl PartialEq for CustomPotential {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.value, &other.value)
    }
}

/// External confining potential `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ConfinementSpec {
    /// `|x|^2`
    #[default]
    Quadratic,
    /// `½ Σ x_k^4 - |x|^2`
    QuarticMinusQuadratic,
    /// `x_axis^2`
    CoordinateSquare { axis: usize },
    #[serde(skip)]
    Custom(CustomPotential),
}

impl ConfinementSpec {
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConfinementSpec::Quadratic => x.iter().map(|v| v * v).sum(),
            ConfinementSpec::QuarticMinusQuadratic => x
                .iter()
                .map(|v| {
                    let v2 = v * v;
                    0.5 * v2 * v2 - v2
                })
                .sum(),
            ConfinementSpec::CoordinateSquare { axis } => x[*axis] * x[*axis],
            ConfinementSpec::Custom(c) => (c.value)(x),
        }
    }

    /// Writes `∇V(x)` into `out`.
    #[inline]
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ConfinementSpec::Quadratic => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v;
                }
            }
            ConfinementSpec::QuarticMinusQuadratic => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v * v * v - 2.0 * v;
                }
            }
            ConfinementSpec::CoordinateSquare { axis } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[*axis] = 2.0 * x[*axis];
            }
            ConfinementSpec::Custom(c) => (c.gradient)(x, out),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, ConfinementSpec::Quadratic)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            ConfinementSpec::CoordinateSquare { axis } if *axis >= d => {
                Err(GasError::InvalidConfinement(format!(
                    "axis {axis} out of range for dimension {d}"
                )))
            }
            ConfinementSpec::Custom(_) => self.check_growth(d),
            _ => Ok(()),
        }
    }

    /// Sampled check that `V` grows without bound along a fan of directions.
    fn check_growth(&self, d: usize) -> Result<()> {
        let directions = (0..2 * d).map(|k| {
            let mut v = vec![0.0; d];
            v[k % d] = if k < d { 1.0 } else { -1.0 };
            v
        });
        for dir in directions {
            let mut prev = f64::NEG_INFINITY;
            for &radius in &[10.0, 100.0, 1000.0] {
                let x: Vec<f64> = dir.iter().map(|v| v * radius).collect();
                let value = self.value(&x);
                if !value.is_finite() || value <= prev {
                    return Err(GasError::InvalidConfinement(format!(
                        "V does not grow to +infinity along {dir:?}"
                    )));
                }
                prev = value;
            }
        }
        Ok(())
    }
}
