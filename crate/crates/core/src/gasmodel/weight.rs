use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    Constant,
    NonMonotonic,
}

impl Monotonicity {
    pub fn is_strict(self) -> bool {
        matches!(self, Monotonicity::Increasing | Monotonicity::Decreasing)
    }
}

type WeightFn = dyn Fn(f64) -> f64 + Send + Sync;

/// User-supplied weight with an explicit monotonicity tag.
#[derive(Clone)]
pub struct CustomWeight {
    pub name: String,
    value: Arc<WeightFn>,
    derivative: Option<Arc<WeightFn>>,
    pub monotonicity: Option<Monotonicity>,
}

impl CustomWeight {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        monotonicity: Option<Monotonicity>,
    ) -> Self {
        CustomWeight {
            name: name.into(),
            value: Arc::new(value),
            derivative: None,
            monotonicity,
        }
    }

    pub fn with_derivative(mut self, derivative: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }
}

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomWeight({}, {:?})", self.name, self.monotonicity)
    }
}

impl PartialEq for CustomWeight {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.value, &other.value)
    }
}

/// Charge-dependent weight `g(q)` of the confinement term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightSpec {
    Constant { value: f64 },
    /// `g(q) = q`
    Linear,
    /// `g(q) = 1/sqrt(q)`
    InverseSqrt,
    /// `g(q) = 1/q`
    Inverse,
    /// `g(q) = 2 + sin(πq/3)`
    SineOffset,
    #[serde(skip)]
    Custom(CustomWeight),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Constant { value: 1.0 }
    }
}

impl WeightSpec {
    /// Raw `g(q)` without positivity checks; used in hot loops.
    #[inline]
    pub fn g(&self, q: f64) -> f64 {
        match self {
            WeightSpec::Constant { value } => *value,
            WeightSpec::Linear => q,
            WeightSpec::InverseSqrt => 1.0 / q.sqrt(),
            WeightSpec::Inverse => 1.0 / q,
            WeightSpec::SineOffset => 2.0 + (PI * q / 3.0).sin(),
            WeightSpec::Custom(c) => (c.value)(q),
        }
    }

    pub fn eval(&self, q: f64) -> Result<f64> {
        if !(q > 0.0) {
            return Err(GasError::Domain(format!("weight evaluated at charge {q}")));
        }
        let value = self.g(q);
        if !(value > 0.0) || !value.is_finite() {
            return Err(GasError::InvalidWeight(format!("g({q}) = {value} is not positive")));
        }
        Ok(value)
    }

    /// `g'(q)`; central differences for custom weights without a derivative.
    pub fn derivative(&self, q: f64) -> f64 {
        match self {
            WeightSpec::Constant { .. } => 0.0,
            WeightSpec::Linear => 1.0,
            WeightSpec::InverseSqrt => -0.5 * q.powf(-1.5),
            WeightSpec::Inverse => -1.0 / (q * q),
            WeightSpec::SineOffset => PI / 3.0 * (PI * q / 3.0).cos(),
            WeightSpec::Custom(c) => match &c.derivative {
                Some(dg) => dg(q),
                None => {
                    let h = 1e-6 * q.abs().max(1e-3);
                    ((c.value)(q + h) - (c.value)(q - h)) / (2.0 * h)
                }
            },
        }
    }

    /// Declared monotonicity; `None` for an untagged custom weight.
    pub fn monotonicity(&self) -> Option<Monotonicity> {
        match self {
            WeightSpec::Constant { .. } => Some(Monotonicity::Constant),
            WeightSpec::Linear => Some(Monotonicity::Increasing),
            WeightSpec::InverseSqrt | WeightSpec::Inverse => Some(Monotonicity::Decreasing),
            WeightSpec::SineOffset => Some(Monotonicity::NonMonotonic),
            WeightSpec::Custom(c) => c.monotonicity,
        }
    }

    /// Checks positivity on `[q_min, q_max]` and that the declared tag matches
    /// the sampled sign of `g'`.
    pub fn validate(&self, q_min: f64, q_max: f64) -> Result<()> {
        const SAMPLES: usize = 257;
        let tag = self.monotonicity().ok_or(GasError::MonotonicityTagRequired)?;
        let mut positive = 0usize;
        let mut negative = 0usize;
        for k in 0..SAMPLES {
            let q = q_min + (q_max - q_min) * k as f64 / (SAMPLES - 1) as f64;
            self.eval(q)?;
            let dg = self.derivative(q);
            let scale = self.g(q).abs().max(1e-12);
            if dg > 1e-12 * scale {
                positive += 1;
            } else if dg < -1e-12 * scale {
                negative += 1;
            }
        }
        let observed = match (positive, negative) {
            (0, 0) => Monotonicity::Constant,
            (_, 0) => Monotonicity::Increasing,
            (0, _) => Monotonicity::Decreasing,
            _ => Monotonicity::NonMonotonic,
        };
        // a one-point range cannot distinguish monotone from constant
        let compatible = observed == tag || (q_max == q_min && tag != Monotonicity::NonMonotonic);
        if !compatible {
            return Err(GasError::InvalidWeight(format!(
                "declared {tag:?} but g' sampled as {observed:?} on [{q_min}, {q_max}]"
            )));
        }
        Ok(())
    }
}
