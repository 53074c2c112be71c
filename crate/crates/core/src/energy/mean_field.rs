use crate::equilibrium::EquilibriumProfile;
use crate::error::{GasError, Result};
use crate::gasmodel::{sphere_area, GasSpec, PairKernel};
use crate::quadrature::gauss_legendre_graded;

const GRADING_LEVELS: usize = 28;

/// Intensive energy `h(μ) = ∫ q g V dμ − ∫∫ q q' W dμ dμ` of a profile.
pub fn intensive_energy(profile: &EquilibriumProfile, spec: &GasSpec) -> Result<f64> {
    check_compatible(profile, spec)?;
    profile.intensive_energy()
}

/// `Φ(x) = ∫ q' W(|x − x'|) dμ(q', x')`.
///
/// Coulomb kernels use the shell theorem; other kernels integrate the
/// spherical average of `W` against the profile's charge density.
pub fn mean_field_potential(profile: &EquilibriumProfile, spec: &GasSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.dimension || spec.dimension != profile.dimension() {
        return Err(GasError::InvalidConfiguration("point and profile dimensions differ".into()));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if spec.kernel.is_coulomb() {
        profile.mean_field(r)
    } else {
        let kernel = spec.pair_kernel()?;
        radial_potential(&kernel, spec.dimension, |s| profile.charge_density(s), &profile.breakpoints(), r)
    }
}

/// `∫ ρ_q(|y|) W(|x − y|) dy` at `|x| = r` for a radial density supported
/// on `[breaks[0], breaks.last()]`, smooth between consecutive breakpoints.
pub fn radial_potential(
    kernel: &PairKernel,
    d: usize,
    rho_q: impl Fn(f64) -> f64,
    breaks: &[f64],
    r: f64,
) -> Result<f64> {
    if d < 2 {
        return Err(GasError::InvalidDimension(d));
    }
    if kernel.exponent() >= (d - 1) as f64 + 1.0 {
        return Err(GasError::WrongRegime("kernel singularity is not locally integrable".into()));
    }
    let lower_area = sphere_area(d - 1);
    let power = d as i32 - 2;
    // spherical average of W over the sphere of radius s around the origin
    let shell = |s: f64| -> f64 {
        let integrand = |theta: f64| {
            let dist2 = (r * r + s * s - 2.0 * r * s * theta.cos()).max(0.0);
            if dist2 == 0.0 {
                return 0.0;
            }
            kernel.eval_sq(dist2).0 * theta.sin().powi(power)
        };
        let theta_integral = gauss_legendre_graded(integrand, 0.0, std::f64::consts::PI, GRADING_LEVELS);
        lower_area * s.powi(d as i32 - 1) * theta_integral * rho_q(s)
    };
    let mut cuts: Vec<f64> = breaks.to_vec();
    if r > breaks[0] && r < *breaks.last().unwrap() {
        cuts.push(r);
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        // grade toward whichever end touches the evaluation radius
        total += if (lo - r).abs() <= (hi - r).abs() {
            gauss_legendre_graded(&shell, lo, hi, GRADING_LEVELS)
        } else {
            gauss_legendre_graded(|t| shell(lo + hi - t), lo, hi, GRADING_LEVELS)
        };
    }
    if !total.is_finite() {
        return Err(GasError::Quadrature {
            estimate: total,
            error: f64::NAN,
            tolerance: 1e-9,
        });
    }
    Ok(total)
}

/// `ζ(q, x) = ½ q g(q) V(x) − q Φ(x) − ½ q C(q)`; zero on the support of
/// charge `q` and non-negative away from it.
pub fn zeta(profile: &EquilibriumProfile, spec: &GasSpec, q: f64, x: &[f64]) -> Result<f64> {
    let (q_min, q_max) = profile.charge_support();
    let slack = 1e-12 * q_max;
    if !(q >= q_min - slack && q <= q_max + slack) {
        return Err(GasError::Domain(format!("charge {q} outside [{q_min}, {q_max}]")));
    }
    let g = profile.weight(q)?;
    let phi = mean_field_potential(profile, spec, x)?;
    let c = profile.equilibrium_constant(q)?;
    Ok(0.5 * q * g * spec.confinement.value(x) - q * phi - 0.5 * q * c)
}

pub(super) fn check_compatible(profile: &EquilibriumProfile, spec: &GasSpec) -> Result<()> {
    if !spec.is_radial_coulomb() {
        return Err(GasError::WrongRegime(
            "profiles describe Coulomb gases in a quadratic trap".into(),
        ));
    }
    if profile.dimension() != spec.dimension {
        return Err(GasError::InvalidConfiguration("profile and gas dimensions differ".into()));
    }
    Ok(())
}
