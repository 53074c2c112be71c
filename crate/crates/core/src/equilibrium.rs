//! Analytic mean-field minimizers for Coulomb gases in a quadratic trap.
//!
//! Every prediction rests on the same radial force balance: a particle of
//! charge `q` at radius `r` in the support feels the enclosed charge
//! `Q(r) = g(q) r^d / c_d`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};
use crate::gasmodel::{
    geometric_constants, ChargeDistribution, ChargeForm, ChargeSampling, Configuration, GasSpec,
    GeometricConstants, Monotonicity, PairKernel, WeightSpec, KernelSpec,
};
use crate::quadrature::adaptive_simpson;

/// Default number of rows in exported profiles.
pub const GRID_POINTS: usize = 2048;

const QUAD_TOL: f64 = 1e-11;

const PLASTIC_A1: f64 = 0.754_877_666_246_692_8;
const PLASTIC_A2: f64 = 0.569_840_290_998_053_3;
const CHARGE_STRIDE: f64 = std::f64::consts::SQRT_2 - 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileFlag {
    UniformDisordered,
    OrderedIncreasing,
    OrderedDecreasing,
}

/// One species of a multicomponent gas and the annulus it fills.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub charge: f64,
    pub fraction: f64,
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Particle density inside the shell.
    pub density: f64,
    pub weight: f64,
}

impl Shell {
    fn volume(&self, ball: f64, d: i32) -> f64 {
        ball * (self.outer_radius.powi(d) - self.inner_radius.powi(d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellLayout {
    pub dimension: usize,
    pub increasing: bool,
    /// Sorted by radius, innermost first.
    pub shells: Vec<Shell>,
}

impl ShellLayout {
    /// Gaps between consecutive shells (outer radius to next inner radius).
    pub fn gaps(&self) -> Vec<f64> {
        self.shells
            .windows(2)
            .map(|w| w[1].inner_radius - w[0].outer_radius)
            .collect()
    }

    pub fn support_radius(&self) -> f64 {
        self.shells.last().map_or(0.0, |s| s.outer_radius)
    }

    /// Per-shell particle mass `density × volume`.
    pub fn shell_masses(&self) -> Vec<f64> {
        let ball = geometric_constants(self.dimension).map(|g| g.ball_volume).unwrap_or(f64::NAN);
        let d = self.dimension as i32;
        self.shells.iter().map(|s| s.density * s.volume(ball, d)).collect()
    }

    fn shell_of(&self, q: f64) -> Option<&Shell> {
        self.shells
            .iter()
            .find(|s| (s.charge - q).abs() <= 1e-12 * s.charge.abs().max(1.0))
    }
}

/// Piece of the enclosed-charge curve with `Q(s) = a + b s^d` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Segment {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Structure {
    /// Constant `g`: uniform charge density, charge independent of position.
    Uniform { weight: f64, law: ChargeDistribution },
    Shells(ShellLayout),
    Continuous {
        law: ChargeDistribution,
        weight: WeightSpec,
        decreasing: bool,
    },
}

/// Radially symmetric mean-field minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumProfile {
    constants: GeometricConstants,
    kernel: PairKernel,
    support_radius: f64,
    mean_charge: f64,
    flag: ProfileFlag,
    structure: Structure,
    segments: Vec<Segment>,
}

/// Row of an exported profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub r: f64,
    pub rho: f64,
    pub rho_q: f64,
    /// `NaN` when the charge is not a function of position.
    pub q_of_r: f64,
}

/// JSON metadata of an exported profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMetadata {
    pub dimension: usize,
    pub support_radius: f64,
    pub flag: ProfileFlag,
    pub mean_charge: f64,
    pub second_moment: f64,
    pub intensive_energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shells: Option<Vec<Shell>>,
}

/// Admissible charges sharing one value of `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub weight: f64,
    pub charges: Vec<f64>,
}

/// What can be said for non-monotone weights: at any position all particles
/// share one value of `g`, so the charges present there form a level set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialPrediction {
    pub level_sets: Vec<LevelSet>,
}

impl PartialPrediction {
    pub fn max_multiplicity(&self) -> usize {
        self.level_sets.iter().map(|l| l.charges.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Profile(EquilibriumProfile),
    Shells {
        layout: ShellLayout,
        profile: EquilibriumProfile,
    },
    Partial(PartialPrediction),
}

impl Prediction {
    pub fn profile(&self) -> Option<&EquilibriumProfile> {
        match self {
            Prediction::Profile(p) | Prediction::Shells { profile: p, .. } => Some(p),
            Prediction::Partial(_) => None,
        }
    }
}

fn require_radial_coulomb(spec: &GasSpec) -> Result<()> {
    if !spec.is_radial_coulomb() {
        return Err(GasError::WrongRegime(
            "analytic predictions need the Coulomb kernel, V = |x|^2 and no manifold".into(),
        ));
    }
    Ok(())
}

/// Dispatches on the weight's monotonicity and the form of the charge law.
pub fn predict(spec: &GasSpec) -> Result<Prediction> {
    spec.validate()?;
    require_radial_coulomb(spec)?;
    let (q_min, q_max) = spec.charge_law.support();
    let tag = spec.weight.monotonicity().ok_or(GasError::MonotonicityTagRequired)?;
    let tag = if q_min == q_max { Monotonicity::Constant } else { tag };
    match tag {
        Monotonicity::Constant => Ok(Prediction::Profile(constant_g_profile(spec)?)),
        Monotonicity::NonMonotonic => Ok(Prediction::Partial(level_sets(spec, 64)?)),
        _ if spec.charge_law.is_atomic() => {
            let layout = shell_layout(spec)?;
            let profile = EquilibriumProfile::from_layout(&layout)?;
            Ok(Prediction::Shells { layout, profile })
        }
        _ => Ok(Prediction::Profile(continuous_profile(spec)?)),
    }
}

/// Uniform ball for constant weight `g = c`: charge density `d c / k_d`,
/// radius `(c_d ⟨q⟩ / c)^{1/d}`.
pub fn constant_g_profile(spec: &GasSpec) -> Result<EquilibriumProfile> {
    require_radial_coulomb(spec)?;
    let c = match &spec.weight {
        WeightSpec::Constant { value } => *value,
        w if spec.charge_law.support().0 == spec.charge_law.support().1 => w.eval(spec.charge_law.support().0)?,
        w if w.monotonicity() == Some(Monotonicity::Constant) => w.eval(spec.charge_law.support().0)?,
        _ => return Err(GasError::WrongRegime("weight is not constant".into())),
    };
    let constants = spec.constants()?;
    let d = spec.dimension as f64;
    let mean = spec.charge_law.mean();
    let radius = (constants.c_d * mean / c).powf(1.0 / d);
    Ok(EquilibriumProfile {
        constants,
        kernel: spec.pair_kernel()?,
        support_radius: radius,
        mean_charge: mean,
        flag: ProfileFlag::UniformDisordered,
        structure: Structure::Uniform {
            weight: c,
            law: spec.charge_law.clone(),
        },
        segments: vec![Segment {
            lo: 0.0,
            hi: radius,
            a: 0.0,
            b: c / constants.c_d,
        }],
    })
}

/// Concentric shells of a multicomponent gas with strictly monotone `g`.
pub fn shell_layout(spec: &GasSpec) -> Result<ShellLayout> {
    require_radial_coulomb(spec)?;
    let atoms = spec
        .charge_law
        .atoms()
        .ok_or_else(|| GasError::WrongRegime("shell layouts need an atomic charge law".into()))?;
    let increasing = match spec.weight.monotonicity().ok_or(GasError::MonotonicityTagRequired)? {
        Monotonicity::Increasing => true,
        Monotonicity::Decreasing => false,
        other => {
            return Err(GasError::WrongRegime(format!(
                "shell layouts need a strictly monotone weight, got {other:?}"
            )))
        }
    };
    let constants = spec.constants()?;
    let d = spec.dimension as f64;
    let c_d = constants.c_d;
    let atoms: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| a.1 > 0.0).collect();
    let m = atoms.len();
    let mut shells = Vec::with_capacity(m);
    for i in 0..m {
        let (q, nu) = atoms[i];
        let g = spec.weight.eval(q)?;
        let inner: f64 = if increasing {
            atoms[i + 1..].iter().map(|a| a.0 * a.1).sum()
        } else {
            atoms[..i].iter().map(|a| a.0 * a.1).sum()
        };
        let inner_d = c_d * inner / g;
        let outer_d = inner_d + c_d * q * nu / g;
        shells.push(Shell {
            charge: q,
            fraction: nu,
            inner_radius: inner_d.powf(1.0 / d),
            outer_radius: outer_d.powf(1.0 / d),
            density: d * g / (constants.k_d * q),
            weight: g,
        });
    }
    shells.sort_by(|a, b| a.inner_radius.total_cmp(&b.inner_radius));
    let layout = ShellLayout {
        dimension: spec.dimension,
        increasing,
        shells,
    };
    if let Some(gap) = layout.gaps().into_iter().find(|g| *g <= 0.0) {
        return Err(GasError::Consistency(format!("shells overlap: gap {gap}")));
    }
    Ok(layout)
}

/// Ordered profile for a continuous charge law and strictly monotone `g`.
pub fn continuous_profile(spec: &GasSpec) -> Result<EquilibriumProfile> {
    require_radial_coulomb(spec)?;
    if spec.charge_law.is_atomic() {
        return Err(GasError::WrongRegime("continuous profile needs a continuous law".into()));
    }
    if let ChargeForm::Tabulated { density, .. } = spec.charge_law.form() {
        let interior_gap = density
            .windows(2)
            .enumerate()
            .any(|(k, w)| w[0] == 0.0 && w[1] == 0.0 && k > 0 && k + 2 < density.len());
        if interior_gap {
            return Err(GasError::WrongRegime("charge support is not connected".into()));
        }
    }
    let decreasing = match spec.weight.monotonicity().ok_or(GasError::MonotonicityTagRequired)? {
        Monotonicity::Increasing => false,
        Monotonicity::Decreasing => true,
        other => {
            return Err(GasError::WrongRegime(format!(
                "continuous profiles need a strictly monotone weight, got {other:?}"
            )))
        }
    };
    let constants = spec.constants()?;
    let (q_min, q_max) = spec.charge_law.support();
    let mean = spec.charge_law.mean();
    let boundary_g = spec.weight.eval(q_min)?.min(spec.weight.eval(q_max)?);
    let radius = (constants.c_d * mean / boundary_g).powf(1.0 / spec.dimension as f64);
    let profile = EquilibriumProfile {
        constants,
        kernel: spec.pair_kernel()?,
        support_radius: radius,
        mean_charge: mean,
        flag: if decreasing {
            ProfileFlag::OrderedDecreasing
        } else {
            ProfileFlag::OrderedIncreasing
        },
        structure: Structure::Continuous {
            law: spec.charge_law.clone(),
            weight: spec.weight.clone(),
            decreasing,
        },
        segments: Vec::new(),
    };
    let mass = profile.mass_by_quadrature()?;
    if (mass - 1.0).abs() > 1e-6 {
        return Err(GasError::Consistency(format!("profile mass {mass} differs from 1")));
    }
    Ok(profile)
}

/// Level sets `{q : g(q) = w}` on a grid of weight values.
pub fn level_sets(spec: &GasSpec, count: usize) -> Result<PartialPrediction> {
    let (q_min, q_max) = spec.charge_law.support();
    const SAMPLES: usize = 2049;
    let qs: Vec<f64> = (0..SAMPLES)
        .map(|k| q_min + (q_max - q_min) * k as f64 / (SAMPLES - 1) as f64)
        .collect();
    let gs: Vec<f64> = qs.iter().map(|&q| spec.weight.eval(q)).collect::<Result<_>>()?;
    let g_lo = gs.iter().cloned().fold(f64::INFINITY, f64::min);
    let g_hi = gs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut level_sets = Vec::with_capacity(count);
    for k in 0..count {
        let w = g_lo + (g_hi - g_lo) * (k as f64 + 0.5) / count as f64;
        let mut charges = Vec::new();
        for j in 0..SAMPLES - 1 {
            let (fa, fb) = (gs[j] - w, gs[j + 1] - w);
            if fa == 0.0 {
                charges.push(qs[j]);
            } else if fa * fb < 0.0 {
                let root = bisect(|q| spec.weight.g(q) - w, qs[j], qs[j + 1]);
                charges.push(root);
            }
        }
        level_sets.push(LevelSet { weight: w, charges });
    }
    Ok(PartialPrediction { level_sets })
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-15 * mid.abs().max(1e-300) {
            break;
        }
        let fm = f(mid);
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl EquilibriumProfile {
    /// Profile of a shell layout (piecewise-constant densities).
    pub fn from_layout(layout: &ShellLayout) -> Result<Self> {
        let constants = geometric_constants(layout.dimension)?;
        let mut segments = Vec::new();
        let mut enclosed = 0.0;
        let mut previous_outer = 0.0;
        let d = layout.dimension as i32;
        for s in &layout.shells {
            if s.inner_radius > previous_outer {
                segments.push(Segment {
                    lo: previous_outer,
                    hi: s.inner_radius,
                    a: enclosed,
                    b: 0.0,
                });
            }
            let b = s.weight / constants.c_d;
            let mut a = enclosed - b * s.inner_radius.powi(d);
            if a.abs() < 1e-13 * enclosed.max(1.0) {
                a = 0.0;
            }
            segments.push(Segment {
                lo: s.inner_radius,
                hi: s.outer_radius,
                a,
                b,
            });
            enclosed += s.charge * s.fraction;
            previous_outer = s.outer_radius;
        }
        Ok(EquilibriumProfile {
            constants,
            kernel: PairKernel::new(&KernelSpec::Coulomb, layout.dimension)?,
            support_radius: layout.support_radius(),
            mean_charge: enclosed,
            flag: if layout.increasing {
                ProfileFlag::OrderedIncreasing
            } else {
                ProfileFlag::OrderedDecreasing
            },
            structure: Structure::Shells(layout.clone()),
            segments,
        })
    }

    pub fn dimension(&self) -> usize {
        self.constants.dimension
    }

    pub fn constants(&self) -> &GeometricConstants {
        &self.constants
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn flag(&self) -> ProfileFlag {
        self.flag
    }

    /// `⟨q⟩`, the total charge of the profile.
    pub fn mean_charge(&self) -> f64 {
        self.mean_charge
    }

    pub fn shells(&self) -> Option<&ShellLayout> {
        match &self.structure {
            Structure::Shells(l) => Some(l),
            _ => None,
        }
    }

    fn d(&self) -> i32 {
        self.constants.dimension as i32
    }

    /// `ξ(q) = r(q)^d` for continuous profiles.
    fn xi(&self, q: f64) -> f64 {
        let Structure::Continuous { law, weight, decreasing } = &self.structure else {
            unreachable!()
        };
        let (q_min, q_max) = law.support();
        let m = if *decreasing {
            law.partial_first_moment(q_min, q)
        } else {
            law.partial_first_moment(q, q_max)
        };
        (self.constants.c_d * m / weight.g(q)).max(0.0)
    }

    /// Equilibrium radius of a particle of charge `q`, when the position of a
    /// charge is determined.
    pub fn radius_of(&self, q: f64) -> Option<f64> {
        match &self.structure {
            Structure::Uniform { .. } => None,
            Structure::Shells(layout) => layout
                .shell_of(q)
                .map(|s| (0.5 * (s.inner_radius.powi(self.d()) + s.outer_radius.powi(self.d()))).powf(1.0 / self.d() as f64)),
            Structure::Continuous { law, .. } => {
                let (q_min, q_max) = law.support();
                if q < q_min || q > q_max {
                    None
                } else {
                    Some(self.xi(q).powf(1.0 / self.d() as f64))
                }
            }
        }
    }

    /// Charge of the particles found at radius `r`, when unique.
    pub fn charge_at(&self, r: f64) -> Option<f64> {
        if r > self.support_radius * (1.0 + 1e-12) {
            return None;
        }
        match &self.structure {
            Structure::Uniform { .. } => None,
            Structure::Shells(layout) => layout
                .shells
                .iter()
                .find(|s| r >= s.inner_radius && r <= s.outer_radius)
                .map(|s| s.charge),
            Structure::Continuous { law, decreasing, .. } => {
                let (q_min, q_max) = law.support();
                let target = r.powi(self.d());
                // ξ grows with q for decreasing g and shrinks otherwise
                let f = |q: f64| {
                    let v = self.xi(q) - target;
                    if *decreasing {
                        v
                    } else {
                        -v
                    }
                };
                if f(q_min) >= 0.0 {
                    return Some(q_min);
                }
                if f(q_max) <= 0.0 {
                    return Some(q_max);
                }
                Some(bisect(f, q_min, q_max))
            }
        }
    }

    /// Spatial particle density `ρ(r)`.
    pub fn density(&self, r: f64) -> f64 {
        if r > self.support_radius {
            return 0.0;
        }
        match &self.structure {
            Structure::Uniform { .. } => 1.0 / (self.constants.ball_volume * self.support_radius.powi(self.d())),
            Structure::Shells(layout) => layout
                .shells
                .iter()
                .find(|s| r >= s.inner_radius && r < s.outer_radius)
                .map_or(0.0, |s| s.density),
            Structure::Continuous { law, weight, decreasing } => {
                let (q_min, q_max) = law.support();
                let ratio = |q: f64| {
                    let nu = law.density(q).unwrap_or(0.0);
                    let (m, dm) = if *decreasing {
                        (law.partial_first_moment(q_min, q), q * nu)
                    } else {
                        (law.partial_first_moment(q, q_max), -q * nu)
                    };
                    let g = weight.g(q);
                    let dxi = self.constants.c_d * (dm * g - m * weight.derivative(q)) / (g * g);
                    self.constants.dimension as f64 * nu / (self.constants.sphere_area * dxi.abs())
                };
                let q = self.charge_at(r).unwrap();
                let value = ratio(q);
                if value.is_finite() {
                    value
                } else {
                    // 0/0 where ν vanishes at the centre charge: take the limit from inside
                    let nudge = 1e-7 * (q_max - q_min);
                    ratio(if *decreasing { q + nudge } else { q - nudge })
                }
            }
        }
    }

    /// Charge density `ρ_q(r)`.
    pub fn charge_density(&self, r: f64) -> f64 {
        if r > self.support_radius {
            return 0.0;
        }
        match &self.structure {
            Structure::Uniform { .. } => self.mean_charge * self.density(r),
            Structure::Shells(layout) => layout
                .shells
                .iter()
                .find(|s| r >= s.inner_radius && r < s.outer_radius)
                .map_or(0.0, |s| s.density * s.charge),
            Structure::Continuous { .. } => self.charge_at(r).unwrap() * self.density(r),
        }
    }

    /// Fraction of particles inside radius `r`.
    pub fn enclosed_fraction(&self, r: f64) -> f64 {
        if r >= self.support_radius {
            return 1.0;
        }
        let d = self.d();
        match &self.structure {
            Structure::Uniform { .. } => (r / self.support_radius).powi(d),
            Structure::Shells(layout) => layout
                .shells
                .iter()
                .map(|s| {
                    let hi = r.min(s.outer_radius);
                    if hi <= s.inner_radius {
                        0.0
                    } else {
                        s.fraction * (hi.powi(d) - s.inner_radius.powi(d))
                            / (s.outer_radius.powi(d) - s.inner_radius.powi(d))
                    }
                })
                .sum(),
            Structure::Continuous { law, decreasing, .. } => {
                let q = self.charge_at(r).unwrap();
                if *decreasing {
                    law.cdf(q)
                } else {
                    1.0 - law.cdf(q)
                }
            }
        }
    }

    /// Charge inside radius `r`.
    pub fn enclosed_charge(&self, r: f64) -> f64 {
        if r >= self.support_radius {
            return self.mean_charge;
        }
        match &self.structure {
            Structure::Continuous { weight, .. } => {
                let q = self.charge_at(r).unwrap();
                weight.g(q) * r.powi(self.d()) / self.constants.c_d
            }
            _ => {
                let d = self.d();
                self.segments
                    .iter()
                    .find(|s| r >= s.lo && r <= s.hi)
                    .map_or(0.0, |s| s.a + s.b * r.powi(d))
            }
        }
    }

    /// Antiderivative of `s^{1-d}`.
    fn log_like(&self, s: f64) -> f64 {
        let d = self.d();
        if d == 2 {
            s.ln()
        } else {
            s.powi(2 - d) / (2 - d) as f64
        }
    }

    /// `∫_lo^hi W'(s) Q(s) ds` on a segment.
    fn segment_field_integral(&self, s: &Segment, lo: f64, hi: f64) -> f64 {
        let c = self.constants.c_d;
        let mut v = 0.5 * s.b * (hi * hi - lo * lo);
        if s.a != 0.0 {
            v += s.a * (self.log_like(hi) - self.log_like(lo));
        }
        c * v
    }

    /// Coulomb mean-field potential `Φ(r) = ∫ q' W(|x - x'|) dμ(q', x')`.
    pub fn mean_field(&self, r: f64) -> Result<f64> {
        let big_r = self.support_radius;
        if r >= big_r {
            return Ok(self.mean_charge * self.kernel.value(r));
        }
        let base = self.mean_charge * self.kernel.value(big_r);
        match &self.structure {
            Structure::Continuous { weight, .. } => {
                // W'(s) Q(s) = s g(q(s))
                let integral = adaptive_simpson(
                    |s| s * weight.g(self.charge_at(s).unwrap()),
                    r,
                    big_r,
                    QUAD_TOL,
                )?;
                Ok(base - integral.value)
            }
            _ => {
                let mut integral = 0.0;
                for s in &self.segments {
                    let lo = s.lo.max(r);
                    if s.hi > lo {
                        integral += self.segment_field_integral(s, lo, s.hi);
                    }
                }
                Ok(base - integral)
            }
        }
    }

    /// Radial derivative of `Φ`, `W'(r) Q(r)`.
    pub fn mean_field_gradient(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        self.kernel.derivative(r) * self.enclosed_charge(r)
    }

    /// Self-interaction `∫∫ q q' W dμ dμ = ⟨q⟩² W(R) − ∫_0^R W'(r) Q(r)² dr`.
    pub fn self_interaction(&self) -> Result<f64> {
        let big_r = self.support_radius;
        let base = self.mean_charge * self.mean_charge * self.kernel.value(big_r);
        let c = self.constants.c_d;
        let d = self.d();
        match &self.structure {
            Structure::Continuous { weight, .. } => {
                let integral = adaptive_simpson(
                    |s| {
                        let g = weight.g(self.charge_at(s).unwrap());
                        g * g * s.powi(d + 1) / c
                    },
                    0.0,
                    big_r,
                    QUAD_TOL,
                )?;
                Ok(base - integral.value)
            }
            _ => {
                let mut integral = 0.0;
                for s in &self.segments {
                    let (lo, hi) = (s.lo, s.hi);
                    let mut v = s.b * s.b * (hi.powi(d + 2) - lo.powi(d + 2)) / (d + 2) as f64
                        + s.a * s.b * (hi * hi - lo * lo);
                    if s.a != 0.0 {
                        v += s.a * s.a * (self.log_like(hi) - self.log_like(lo));
                    }
                    integral += c * v;
                }
                Ok(base - integral)
            }
        }
    }

    /// Confinement part `∫ q g(q) |x|² dμ`.
    pub fn confinement_energy(&self) -> Result<f64> {
        let d = self.d() as f64;
        let big_r = self.support_radius;
        match &self.structure {
            Structure::Uniform { weight, .. } => Ok(weight * self.mean_charge * d / (d + 2.0) * big_r * big_r),
            Structure::Shells(layout) => Ok(layout
                .shells
                .iter()
                .map(|s| {
                    let di = self.d();
                    let mean_r2 = d / (d + 2.0) * (s.outer_radius.powi(di + 2) - s.inner_radius.powi(di + 2))
                        / (s.outer_radius.powi(di) - s.inner_radius.powi(di));
                    s.fraction * s.charge * s.weight * mean_r2
                })
                .sum()),
            Structure::Continuous { law, weight, .. } => {
                law.integrate(|q| q * weight.g(q) * self.xi(q).powf(2.0 / d))
            }
        }
    }

    /// Intensive energy `h(μ)`.
    pub fn intensive_energy(&self) -> Result<f64> {
        Ok(self.confinement_energy()? - self.self_interaction()?)
    }

    fn weight_of(&self, q: f64) -> Result<f64> {
        match &self.structure {
            Structure::Uniform { weight, .. } => Ok(*weight),
            Structure::Shells(layout) => layout
                .shell_of(q)
                .map(|s| s.weight)
                .ok_or_else(|| GasError::Domain(format!("charge {q} is not a species of the layout"))),
            Structure::Continuous { weight, .. } => weight.eval(q),
        }
    }

    /// `g(q)` as used by the profile.
    pub fn weight(&self, q: f64) -> Result<f64> {
        self.weight_of(q)
    }

    /// Equilibrium constant `C(q) = g(q) |x|² − 2Φ(x)` on the support of
    /// charge `q`.
    pub fn equilibrium_constant(&self, q: f64) -> Result<f64> {
        let g = self.weight_of(q)?;
        let r = match &self.structure {
            Structure::Uniform { .. } => 0.0,
            _ => self
                .radius_of(q)
                .ok_or_else(|| GasError::Domain(format!("charge {q} outside the support")))?,
        };
        Ok(g * r * r - 2.0 * self.mean_field(r)?)
    }

    /// Radii where the densities may jump, from `0` to `R`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![0.0];
        if let Structure::Shells(layout) = &self.structure {
            for s in &layout.shells {
                b.push(s.inner_radius);
                b.push(s.outer_radius);
            }
        }
        b.push(self.support_radius);
        b.sort_by(|a, c| a.total_cmp(c));
        b.dedup();
        b
    }

    /// Charge support of the underlying law.
    pub fn charge_support(&self) -> (f64, f64) {
        match &self.structure {
            Structure::Uniform { law, .. } | Structure::Continuous { law, .. } => law.support(),
            Structure::Shells(layout) => {
                let lo = layout.shells.iter().map(|s| s.charge).fold(f64::INFINITY, f64::min);
                let hi = layout.shells.iter().map(|s| s.charge).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        }
    }

    /// `∫ φ(q, r) dμ(q, x)` for radial integrands.
    pub fn integrate(&self, phi: impl Fn(f64, f64) -> Result<f64>) -> Result<f64> {
        let d = self.d();
        let area = self.constants.sphere_area;
        match &self.structure {
            Structure::Uniform { law, .. } => {
                let big_r = self.support_radius;
                let rho = self.density(0.0);
                let err = std::cell::RefCell::new(None);
                let value = law.integrate(|q| {
                    let inner = adaptive_simpson(
                        |r| match phi(q, r) {
                            Ok(v) => v * rho * area * r.powi(d - 1),
                            Err(e) => {
                                err.borrow_mut().get_or_insert(e);
                                0.0
                            }
                        },
                        0.0,
                        big_r,
                        1e-10,
                    );
                    inner.map(|v| v.value).unwrap_or(f64::NAN)
                })?;
                match err.into_inner() {
                    Some(e) => Err(e),
                    None if value.is_finite() => Ok(value),
                    None => Err(GasError::Quadrature { estimate: value, error: f64::NAN, tolerance: 1e-10 }),
                }
            }
            Structure::Shells(layout) => {
                let mut total = 0.0;
                for s in &layout.shells {
                    let err = std::cell::RefCell::new(None);
                    let inner = adaptive_simpson(
                        |r| match phi(s.charge, r) {
                            Ok(v) => v * s.density * area * r.powi(d - 1),
                            Err(e) => {
                                err.borrow_mut().get_or_insert(e);
                                0.0
                            }
                        },
                        s.inner_radius,
                        s.outer_radius,
                        1e-11,
                    )?;
                    if let Some(e) = err.into_inner() {
                        return Err(e);
                    }
                    total += inner.value;
                }
                Ok(total)
            }
            Structure::Continuous { law, .. } => {
                let err = std::cell::RefCell::new(None);
                let value = law.integrate(|q| match phi(q, self.xi(q).powf(1.0 / d as f64)) {
                    Ok(v) => v,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        0.0
                    }
                })?;
                match err.into_inner() {
                    Some(e) => Err(e),
                    None => Ok(value),
                }
            }
        }
    }

    fn mass_by_quadrature(&self) -> Result<f64> {
        let d = self.d();
        let area = self.constants.sphere_area;
        Ok(adaptive_simpson(
            |r| self.density(r) * area * r.powi(d - 1),
            0.0,
            self.support_radius,
            1e-10,
        )?
        .value)
    }

    /// Tabulates the profile on `n` radii, uniform in `r^d`.
    pub fn tabulate(&self, n: usize) -> Vec<ProfileRow> {
        let d = self.d() as f64;
        (0..n)
            .map(|k| {
                let u = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
                let r = self.support_radius * u.powf(1.0 / d);
                ProfileRow {
                    r,
                    rho: self.density(r),
                    rho_q: self.charge_density(r),
                    q_of_r: self.charge_at(r).unwrap_or(f64::NAN),
                }
            })
            .collect()
    }

    pub fn metadata(&self) -> Result<ProfileMetadata> {
        let second_moment = match &self.structure {
            Structure::Uniform { law, .. } | Structure::Continuous { law, .. } => law.second_moment(),
            Structure::Shells(l) => l.shells.iter().map(|s| s.fraction * s.charge * s.charge).sum(),
        };
        Ok(ProfileMetadata {
            dimension: self.constants.dimension,
            support_radius: self.support_radius,
            flag: self.flag,
            mean_charge: self.mean_charge,
            second_moment,
            intensive_energy: self.intensive_energy()?,
            shells: self.shells().map(|l| l.shells.clone()),
        })
    }

    /// Draws a configuration from the profile.
    ///
    /// `quasi` places particles at stratified radii with low-discrepancy
    /// directions (golden-angle spiral in the plane, Fibonacci sphere in
    /// three dimensions) instead of independent draws.
    pub fn sample_configuration(&self, n: usize, seed: u64, quasi: bool) -> Result<Configuration> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.d() as usize;
        let sampling = if quasi { ChargeSampling::Stratified } else { ChargeSampling::Iid };
        let mut charges: Vec<f64>;
        let mut radii: Vec<f64>;
        match &self.structure {
            Structure::Uniform { law, .. } => {
                charges = law.sample(n, sampling, &mut rng);
                radii = (0..n)
                    .map(|k| {
                        let u = if quasi { (k as f64 + 0.5) / n as f64 } else { rng.random::<f64>() };
                        self.support_radius * u.powf(1.0 / d as f64)
                    })
                    .collect();
            }
            Structure::Shells(layout) => {
                let atoms: Vec<(f64, f64)> = layout.shells.iter().map(|s| (s.charge, s.fraction)).collect();
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                let law = ChargeDistribution::atomic(atoms.iter().map(|a| (a.0, a.1 / total)).collect())?;
                charges = law.sample(n, sampling, &mut rng);
                if quasi {
                    charges.sort_by(|a, b| a.total_cmp(b));
                }
                let di = d as i32;
                radii = Vec::with_capacity(n);
                let mut k = 0;
                while k < n {
                    let q = charges[k];
                    let run = charges[k..].iter().take_while(|&&x| x == q).count();
                    let s = layout.shell_of(q).unwrap();
                    for j in 0..run {
                        let u = if quasi { (j as f64 + 0.5) / run as f64 } else { rng.random::<f64>() };
                        let rd = s.inner_radius.powi(di) + u * (s.outer_radius.powi(di) - s.inner_radius.powi(di));
                        radii.push(rd.powf(1.0 / d as f64));
                    }
                    k += run;
                }
            }
            Structure::Continuous { law, .. } => {
                charges = law.sample(n, sampling, &mut rng);
                radii = charges.iter().map(|&q| self.xi(q).powf(1.0 / d as f64)).collect();
            }
        }
        if quasi {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
            charges = order.iter().map(|&i| charges[i]).collect();
            radii = order.iter().map(|&i| radii[i]).collect();
            if let Structure::Uniform { .. } = self.structure {
                // charge ranks follow a Kronecker sequence so that local charge sums stay balanced
                charges.sort_by(|a, b| a.total_cmp(b));
                let mut slots: Vec<usize> = (0..n).collect();
                slots.sort_by(|&a, &b| (a as f64 * CHARGE_STRIDE).fract().total_cmp(&(b as f64 * CHARGE_STRIDE).fract()));
                let mut assigned = vec![0.0; n];
                for (rank, &slot) in slots.iter().enumerate() {
                    assigned[slot] = charges[rank];
                }
                charges = assigned;
            }
        }
        let mut positions = vec![0.0; n * d];
        let golden = PI * (3.0 - 5f64.sqrt());
        for i in 0..n {
            let dir = &mut positions[i * d..(i + 1) * d];
            if quasi && d == 2 {
                let angle = golden * i as f64;
                dir[0] = angle.cos();
                dir[1] = angle.sin();
            } else if quasi && d == 3 {
                // Kronecker sequence on the plastic-number lattice, independent of the radius index
                let z = 1.0 - 2.0 * (0.5 + i as f64 * PLASTIC_A1).fract();
                let rho = (1.0 - z * z).sqrt();
                let angle = 2.0 * PI * (0.5 + i as f64 * PLASTIC_A2).fract();
                dir[0] = rho * angle.cos();
                dir[1] = rho * angle.sin();
                dir[2] = z;
            } else {
                loop {
                    for v in dir.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        dir.iter_mut().for_each(|v| *v /= norm);
                        break;
                    }
                }
            }
            dir.iter_mut().for_each(|v| *v *= radii[i]);
        }
        Configuration::new(d, positions, charges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_uniform() -> GasSpec {
        GasSpec::new(2, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 2.0).unwrap())
    }

    fn three_species(weight: WeightSpec) -> GasSpec {
        GasSpec::new(2, weight, ChargeDistribution::equal_atoms(&[1.0, 2.0, 3.0]).unwrap())
    }

    #[test]
    fn constant_g_radius() {
        let unit = GasSpec::new(2, WeightSpec::default(), ChargeDistribution::point(1.0).unwrap());
        let p = constant_g_profile(&unit).unwrap();
        assert_relative_eq!(p.support_radius(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.charge_density(0.3), 1.0 / PI, epsilon = 1e-14);

        let spread = GasSpec::new(2, WeightSpec::default(), ChargeDistribution::uniform(1.0, 2.0).unwrap());
        assert_relative_eq!(constant_g_profile(&spread).unwrap().support_radius(), 1.5f64.sqrt(), epsilon = 1e-14);

        let three = GasSpec::new(3, WeightSpec::default(), ChargeDistribution::point(1.0).unwrap());
        assert_relative_eq!(constant_g_profile(&three).unwrap().support_radius(), 1.0, epsilon = 1e-14);

        assert!(matches!(constant_g_profile(&linear_uniform()), Err(GasError::WrongRegime(_))));
    }

    #[test]
    fn three_species_shells() {
        let layout = shell_layout(&three_species(WeightSpec::Linear)).unwrap();
        let s = &layout.shells;
        assert_eq!(s[0].charge, 3.0);
        assert_relative_eq!(s[0].inner_radius, 0.0);
        assert_relative_eq!(s[0].outer_radius, (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s[1].inner_radius, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s[1].outer_radius, (5.0f64 / 6.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s[2].inner_radius, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s[2].outer_radius, 2.0f64.sqrt(), epsilon = 1e-12);
        for (m, sh) in layout.shell_masses().iter().zip(s) {
            assert_relative_eq!(*m, sh.fraction, epsilon = 1e-10);
        }
        assert!(layout.gaps().iter().all(|g| *g > 0.0));
    }

    #[test]
    fn decreasing_shells_reverse_order() {
        let layout = shell_layout(&three_species(WeightSpec::Inverse)).unwrap();
        let charges: Vec<f64> = layout.shells.iter().map(|s| s.charge).collect();
        assert_eq!(charges, vec![1.0, 2.0, 3.0]);
        assert!(layout.gaps().iter().all(|g| *g > 0.0));
    }

    #[test]
    fn linear_weight_closed_forms() {
        let p = continuous_profile(&linear_uniform()).unwrap();
        assert_eq!(p.flag(), ProfileFlag::OrderedIncreasing);
        assert_relative_eq!(p.support_radius(), 1.5f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(p.radius_of(2.0).unwrap(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(p.radius_of(1.0).unwrap(), 1.5f64.sqrt(), epsilon = 1e-14);
        for &r in &[0.0f64, 0.3, 0.8, 1.1, 1.2] {
            let q_closed = -r * r + (r.powi(4) + 4.0).sqrt();
            assert_relative_eq!(p.charge_at(r).unwrap(), q_closed, epsilon = 1e-11);
            let rho_closed = (1.0 - r * r / (r.powi(4) + 4.0).sqrt()) / PI;
            assert_relative_eq!(p.density(r), rho_closed, epsilon = 1e-9);
            let q = p.charge_at(r).unwrap();
            assert_relative_eq!(p.radius_of(q).unwrap(), r, epsilon = 1e-8);
        }
    }

    #[test]
    fn normalization_of_profiles() {
        let specs = [
            linear_uniform(),
            GasSpec::new(2, WeightSpec::InverseSqrt, ChargeDistribution::uniform(0.5, 3.0).unwrap()),
            GasSpec::new(3, WeightSpec::Inverse, ChargeDistribution::uniform(1.0, 4.0).unwrap()),
            GasSpec::new(2, WeightSpec::default(), ChargeDistribution::uniform(1.0, 2.0).unwrap()),
        ];
        for spec in &specs {
            let p = predict(spec).unwrap();
            let p = p.profile().unwrap();
            let d = p.d();
            let area = p.constants().sphere_area;
            let r_max = p.support_radius();
            let mass = adaptive_simpson(|r| p.density(r) * area * r.powi(d - 1), 0.0, r_max, 1e-11).unwrap().value;
            let charge = adaptive_simpson(|r| p.charge_density(r) * area * r.powi(d - 1), 0.0, r_max, 1e-11).unwrap().value;
            assert_relative_eq!(mass, 1.0, epsilon = 1e-6);
            assert_relative_eq!(charge, spec.charge_law.mean(), epsilon = 1e-6);
        }
    }

    #[test]
    fn density_is_non_increasing() {
        for spec in [
            linear_uniform(),
            GasSpec::new(2, WeightSpec::InverseSqrt, ChargeDistribution::uniform(0.5, 3.0).unwrap()),
            GasSpec::new(3, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 5.0).unwrap()),
        ] {
            let p = continuous_profile(&spec).unwrap();
            let rows = p.tabulate(400);
            for w in rows.windows(2) {
                assert!(w[1].rho <= w[0].rho * (1.0 + 1e-9), "{spec:?}");
            }
        }
    }

    #[test]
    fn uniform_disk_potential() {
        let unit = GasSpec::new(2, WeightSpec::default(), ChargeDistribution::point(1.0).unwrap());
        let p = constant_g_profile(&unit).unwrap();
        assert_relative_eq!(p.mean_field(0.0).unwrap(), -0.5, epsilon = 1e-14);
        assert_relative_eq!(p.mean_field(1.0).unwrap(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(p.mean_field(std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.mean_field(0.5).unwrap(), (0.25 - 1.0) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn potential_gradient_is_enclosed_charge_field() {
        let p = continuous_profile(&linear_uniform()).unwrap();
        for &r in &[0.2f64, 0.7, 1.1] {
            let h = 1e-5;
            let fd = (p.mean_field(r + h).unwrap() - p.mean_field(r - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(fd, p.enclosed_charge(r) / r, max_relative = 1e-6);
        }
    }

    #[test]
    fn equilibrium_constant_is_constant_on_shell() {
        let layout = shell_layout(&three_species(WeightSpec::Linear)).unwrap();
        let p = EquilibriumProfile::from_layout(&layout).unwrap();
        for s in &layout.shells {
            let c = p.equilibrium_constant(s.charge).unwrap();
            for t in [0.1, 0.5, 0.9] {
                let r = s.inner_radius + t * (s.outer_radius - s.inner_radius);
                let v = s.weight * r * r - 2.0 * p.mean_field(r).unwrap();
                assert_relative_eq!(v, c, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn partial_prediction_for_sine_weight() {
        let spec = GasSpec::new(2, WeightSpec::SineOffset, ChargeDistribution::uniform(1.0, 5.0).unwrap());
        let Prediction::Partial(partial) = predict(&spec).unwrap() else {
            panic!("expected partial prediction");
        };
        assert!(partial.max_multiplicity() >= 2);
        for set in &partial.level_sets {
            for &q in &set.charges {
                assert!((WeightSpec::SineOffset.g(q) - set.weight).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dispatch() {
        let constant = GasSpec::new(2, WeightSpec::default(), ChargeDistribution::uniform(1.0, 2.0).unwrap());
        assert_eq!(predict(&constant).unwrap().profile().unwrap().flag(), ProfileFlag::UniformDisordered);
        assert!(matches!(predict(&three_species(WeightSpec::Linear)).unwrap(), Prediction::Shells { .. }));
        let riesz = linear_uniform().with_kernel(KernelSpec::Riesz { eta: 0.5 });
        assert!(matches!(predict(&riesz), Err(GasError::WrongRegime(_))));
    }

    #[test]
    fn profile_samples_follow_profile() {
        let p = continuous_profile(&linear_uniform()).unwrap();
        let c = p.sample_configuration(500, 4, false).unwrap();
        for i in 0..c.len() {
            let r = c.radius(i);
            assert_relative_eq!(p.radius_of(c.charges()[i]).unwrap(), r, epsilon = 1e-12);
        }
    }
}
