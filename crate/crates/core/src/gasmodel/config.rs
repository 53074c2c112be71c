use serde::{Deserialize, Serialize};

use super::manifold::ManifoldSpec;
use crate::error::{GasError, Result};

/// Particle positions (row-major, `N × d`) and their charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    dimension: usize,
    positions: Vec<f64>,
    charges: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifold: Option<ManifoldSpec>,
}

impl Configuration {
    pub fn new(dimension: usize, positions: Vec<f64>, charges: Vec<f64>) -> Result<Self> {
        if dimension == 0 {
            return Err(GasError::InvalidDimension(dimension));
        }
        if positions.len() != dimension * charges.len() {
            return Err(GasError::InvalidConfiguration(format!(
                "{} coordinates for {} particles in dimension {dimension}",
                positions.len(),
                charges.len()
            )));
        }
        if let Some(q) = charges.iter().find(|q| !(**q > 0.0) || !q.is_finite()) {
            return Err(GasError::InvalidConfiguration(format!("charge {q} is not positive")));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(GasError::InvalidConfiguration("non-finite coordinate".into()));
        }
        Ok(Configuration {
            dimension,
            positions,
            charges,
            manifold: None,
        })
    }

    /// Attaches a manifold, checking that every particle lies on it.
    pub fn with_manifold(mut self, manifold: ManifoldSpec) -> Result<Self> {
        if self.dimension != manifold.ambient_dimension() {
            return Err(GasError::InvalidConfiguration(format!(
                "manifold lives in R^{} but configuration in R^{}",
                manifold.ambient_dimension(),
                self.dimension
            )));
        }
        for i in 0..self.len() {
            let f = manifold.value(self.position(i));
            if f.abs() >= 1e-10 {
                return Err(GasError::InvalidConfiguration(format!(
                    "particle {i} is off the manifold: |F| = {:e}",
                    f.abs()
                )));
            }
        }
        self.manifold = Some(manifold);
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn manifold(&self) -> Option<&ManifoldSpec> {
        self.manifold.as_ref()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.position(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.radius(i)).collect()
    }

    /// Checks that all charges lie in `[q_min, q_max]` (with a relative slack
    /// for rounding).
    pub fn check_charges(&self, q_min: f64, q_max: f64) -> Result<()> {
        let slack = 1e-12 * q_max.abs();
        match self.charges.iter().find(|&&q| q < q_min - slack || q > q_max + slack) {
            Some(q) => Err(GasError::InvalidConfiguration(format!(
                "charge {q} outside [{q_min}, {q_max}]"
            ))),
            None => Ok(()),
        }
    }

    /// Reorders particles by `perm` (particle `k` of the result is `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dimension;
        let mut positions = Vec::with_capacity(self.positions.len());
        let mut charges = Vec::with_capacity(self.len());
        for &p in perm {
            positions.extend_from_slice(self.position(p));
            charges.push(self.charges[p]);
        }
        debug_assert_eq!(positions.len(), d * charges.len());
        Configuration {
            dimension: d,
            positions,
            charges,
            manifold: self.manifold,
        }
    }
}
