use serde::{Deserialize, Serialize};

use super::mean_field::check_compatible;
use super::Evaluator;
use crate::equilibrium::EquilibriumProfile;
use crate::error::{GasError, Result};
use crate::gasmodel::{Configuration, GasSpec};

/// Terms of `H_N = N² h(μ*) + 2N ∫ζ d(μ̂_N − μ*) − ∫∫ q q' W dδ_N dδ_N`
/// with `δ_N = N μ̂_N − N μ*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBreakdown {
    pub n: usize,
    /// `N² h(μ*)`
    pub leading: f64,
    /// `2N ∫ζ̃ dδ_N`, including the charge-marginal correction below.
    pub zeta_term: f64,
    pub quadratic_remainder: f64,
    /// `H_N` evaluated directly.
    pub total_check: f64,
    /// `(leading − total_check) / (N log N)`; planar gases only.
    pub nlogn_coefficient: Option<f64>,
    /// Part of `zeta_term` from the mismatch between the empirical charges
    /// and `ν`: `N (Σ q_i C(q_i) − N ⟨q C⟩)`.
    pub lagrange_term: f64,
    /// `∫ ζ dμ*`, zero up to quadrature error.
    pub support_residual: f64,
    /// `leading + zeta_term + quadratic_remainder − total_check`.
    pub identity_error: f64,
    pub quadrature_tolerance: f64,
}

impl SplitBreakdown {
    pub fn relative_identity_error(&self) -> f64 {
        self.identity_error.abs() / self.total_check.abs().max(1.0)
    }
}

/// Splits `H_N(config)` against the mean-field minimizer `profile`.
pub fn splitting_terms(config: &Configuration, profile: &EquilibriumProfile, spec: &GasSpec) -> Result<SplitBreakdown> {
    check_compatible(profile, spec)?;
    if config.dimension() != spec.dimension {
        return Err(GasError::InvalidConfiguration("configuration dimension differs".into()));
    }
    let n = config.len();
    let nf = n as f64;
    let charges = config.charges();

    let evaluator = Evaluator::new(spec, charges)?;
    let total = evaluator.energy(config.positions())?;
    let confinement: f64 = (0..n)
        .map(|i| Ok(nf * charges[i] * profile.weight(charges[i])? * spec.confinement.value(config.position(i))))
        .sum::<Result<f64>>()?;
    let pair = confinement - total;

    let a = profile.confinement_energy()?;
    let self_interaction = profile.self_interaction()?;
    let mean_qc = profile.integrate(|q, _| Ok(q * profile.equilibrium_constant(q)?))?;
    let support_residual = 0.5 * a - self_interaction - 0.5 * mean_qc;

    let mut sum_q_phi = 0.0;
    let mut sum_zeta = 0.0;
    let mut sum_qc = 0.0;
    for i in 0..n {
        let q = charges[i];
        let x = config.position(i);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let phi = profile.mean_field(r)?;
        let c = profile.equilibrium_constant(q)?;
        let g = profile.weight(q)?;
        sum_q_phi += q * phi;
        sum_zeta += 0.5 * q * g * spec.confinement.value(x) - q * phi - 0.5 * q * c;
        sum_qc += q * c;
    }
    let lagrange_term = nf * (sum_qc - nf * mean_qc);
    let leading = nf * nf * (a - self_interaction);
    let zeta_term = 2.0 * nf * sum_zeta - 2.0 * nf * nf * support_residual + lagrange_term;
    let quadratic_remainder = -(pair - 2.0 * nf * sum_q_phi + nf * nf * self_interaction);
    let nlogn_coefficient = (spec.dimension == 2 && n > 1).then(|| (leading - total) / (nf * nf.ln()));
    Ok(SplitBreakdown {
        n,
        leading,
        zeta_term,
        quadratic_remainder,
        total_check: total,
        nlogn_coefficient,
        lagrange_term,
        support_residual,
        identity_error: leading + zeta_term + quadratic_remainder - total,
        quadrature_tolerance: 1e-10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{constant_g_profile, continuous_profile, shell_layout};
    use crate::gasmodel::{ChargeDistribution, WeightSpec};

    #[test]
    fn identity_holds_for_every_profile_kind() {
        let uniform = GasSpec::new(2, WeightSpec::default(), ChargeDistribution::uniform(1.0, 2.0).unwrap());
        let linear = GasSpec::new(2, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 2.0).unwrap());
        let species = GasSpec::new(3, WeightSpec::Inverse, ChargeDistribution::equal_atoms(&[1.0, 2.0, 3.0]).unwrap());
        let profiles = [
            (uniform.clone(), constant_g_profile(&uniform).unwrap()),
            (linear.clone(), continuous_profile(&linear).unwrap()),
            (
                species.clone(),
                EquilibriumProfile::from_layout(&shell_layout(&species).unwrap()).unwrap(),
            ),
        ];
        for (spec, profile) in &profiles {
            for seed in 0..3 {
                let mut c = profile.sample_configuration(150, seed, false).unwrap();
                // perturb away from the support so ζ contributes
                for (k, v) in c.positions_mut().iter_mut().enumerate() {
                    *v *= 1.0 + 0.1 * ((k as f64) * 0.37).sin();
                }
                let s = splitting_terms(&c, profile, spec).unwrap();
                assert!(s.relative_identity_error() < 1e-6, "{spec:?}: {s:?}");
                assert!(s.support_residual.abs() < 1e-7, "{s:?}");
            }
        }
    }

    #[test]
    fn breakdown_serializes_each_term() {
        let spec = GasSpec::new(2, WeightSpec::default(), ChargeDistribution::point(1.0).unwrap());
        let p = constant_g_profile(&spec).unwrap();
        let c = p.sample_configuration(20, 1, true).unwrap();
        let json = serde_json::to_value(splitting_terms(&c, &p, &spec).unwrap()).unwrap();
        for key in ["leading", "zeta_term", "quadratic_remainder", "total_check", "nlogn_coefficient"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
