use serde::{Deserialize, Serialize};

use super::charge::ChargeDistribution;
use super::confinement::ConfinementSpec;
use super::geometry::{geometric_constants, GeometricConstants};
use super::kernel::{KernelSpec, PairKernel};
use super::manifold::ManifoldSpec;
use super::weight::WeightSpec;
use crate::error::{GasError, Result};

fn one() -> f64 {
    1.0
}

/// Full description of a heterogeneous gas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasSpec {
    pub dimension: usize,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub confinement: ConfinementSpec,
    #[serde(default)]
    pub weight: WeightSpec,
    pub charge_law: ChargeDistribution,
    #[serde(default = "one")]
    pub unit_charge: f64,
    #[serde(default = "one")]
    pub unit_density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifold: Option<ManifoldSpec>,
}

impl GasSpec {
    /// Coulomb gas with quadratic confinement.
    pub fn new(dimension: usize, weight: WeightSpec, charge_law: ChargeDistribution) -> Self {
        GasSpec {
            dimension,
            kernel: KernelSpec::Coulomb,
            confinement: ConfinementSpec::Quadratic,
            weight,
            charge_law,
            unit_charge: 1.0,
            unit_density: 1.0,
            manifold: None,
        }
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_confinement(mut self, confinement: ConfinementSpec) -> Self {
        self.confinement = confinement;
        self
    }

    pub fn with_manifold(mut self, manifold: ManifoldSpec) -> Self {
        self.manifold = Some(manifold);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d < 2 {
            return Err(GasError::InvalidDimension(d));
        }
        self.kernel.validate(d)?;
        self.confinement.validate(d)?;
        let (q_min, q_max) = self.charge_law.support();
        self.weight.validate(q_min, q_max)?;
        if !(self.unit_charge > 0.0) || !(self.unit_density > 0.0) {
            return Err(GasError::InvalidConfiguration(
                "unit charge and unit density must be positive".into(),
            ));
        }
        if let Some(m) = &self.manifold {
            if m.ambient_dimension() != d {
                return Err(GasError::InvalidManifold(format!(
                    "manifold is embedded in R^{}, gas has d = {d}",
                    m.ambient_dimension()
                )));
            }
            m.validate()?;
        }
        Ok(())
    }

    pub fn constants(&self) -> Result<GeometricConstants> {
        geometric_constants(self.dimension)
    }

    pub fn pair_kernel(&self) -> Result<PairKernel> {
        PairKernel::new(&self.kernel, self.dimension)
    }

    /// `⟨q g(q)⟩` under the charge law.
    pub fn mean_qg(&self) -> Result<f64> {
        self.charge_law.integrate(|q| q * self.weight.g(q))
    }

    /// True when the analytic radial predictions apply: Coulomb kernel,
    /// quadratic confinement, no manifold.
    pub fn is_radial_coulomb(&self) -> bool {
        self.kernel.is_coulomb() && self.confinement.is_quadratic() && self.manifold.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasmodel::manifold::ManifoldKind;

    #[test]
    fn json_round_trip_and_defaults() {
        let json = r#"{"dimension":2,"charge_law":{"form":"uniform","min":1,"max":2},"weight":{"family":"linear"}}"#;
        let spec: GasSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.kernel, KernelSpec::Coulomb);
        assert_eq!(spec.unit_charge, 1.0);
        spec.validate().unwrap();
        let again: GasSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
        assert!(serde_json::from_str::<GasSpec>(r#"{"dimension":2,"charge_law":{"form":"uniform","min":1,"max":2},"bogus":1}"#).is_err());
    }

    #[test]
    fn validation_errors() {
        let law = ChargeDistribution::point(1.0).unwrap();
        let flat = GasSpec::new(1, WeightSpec::default(), law.clone());
        assert_eq!(flat.validate(), Err(GasError::InvalidDimension(1)));
        let sphere2d = GasSpec::new(2, WeightSpec::default(), law.clone())
            .with_manifold(ManifoldSpec::new(ManifoldKind::UnitSphere));
        assert!(matches!(sphere2d.validate(), Err(GasError::InvalidManifold(_))));
        let bad_kernel = GasSpec::new(2, WeightSpec::default(), law).with_kernel(KernelSpec::Riesz { eta: -5.0 });
        assert!(matches!(bad_kernel.validate(), Err(GasError::InvalidKernel(_))));
    }

    #[test]
    fn mean_qg_linear_uniform() {
        let spec = GasSpec::new(2, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 2.0).unwrap());
        assert!((spec.mean_qg().unwrap() - 7.0 / 3.0).abs() < 1e-10);
    }
}
