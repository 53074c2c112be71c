//! Inverse design: the charge law whose gas equilibrates to a prescribed
//! decreasing radial density.
//!
//! Writing `ξ = r^d`, force balance along the ordered profile gives the planar
//! system `dq/dt = 1 − a(q) f(ξ)`, `dξ/dt = −b(q) ξ` with
//! `a(q) = (k_d/d) q/g(q)` and `b = g'/g`. The equilibrium charge curve is
//! the branch leaving the saddle `(q_c, 0)` into `ξ > 0`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::continuous_profile;
use crate::error::{GasError, Result};
use crate::gasmodel::{ball_volume, geometric_constants, sphere_area, ChargeDistribution, GasSpec, WeightSpec};
use crate::minimizer::{minimize, AnnealSchedule, MinimizeOptions};
use crate::quadrature::gauss_legendre;
use crate::stats::{ordering_metric, radial_profiles_within, RadialHistogram};

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(GasError::IncompatibleTarget("need at least two (r, f) samples".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || y.iter().any(|v| !v.is_finite()) {
            return Err(GasError::IncompatibleTarget("abscissae must be strictly increasing and values finite".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes.fill(delta[0]);
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            slopes[0] = Self::end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = Self::end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip { x, y, slopes })
    }

    fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
        let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if m.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            m
        }
    }

    fn segment(&self, t: f64) -> usize {
        (self.x.partition_point(|&v| v <= t).max(1) - 1).min(self.x.len() - 2)
    }

    /// Value, first and second derivative; linear extension outside the knots.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        if t < self.x[0] {
            return (self.y[0] + self.slopes[0] * (t - self.x[0]), self.slopes[0], 0.0);
        }
        if t > self.x[n - 1] {
            return (self.y[n - 1] + self.slopes[n - 1] * (t - self.x[n - 1]), self.slopes[n - 1], 0.0);
        }
        let k = self.segment(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (y0, y1, m0, m1) = (self.y[k], self.y[k + 1], self.slopes[k] * h, self.slopes[k + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1;
        let dv = (6.0 * s2 - 6.0 * s) * y0 + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (-6.0 * s2 + 6.0 * s) * y1 + (3.0 * s2 - 2.0 * s) * m1;
        let ddv = (12.0 * s - 6.0) * y0 + (6.0 * s - 4.0) * m0 + (-12.0 * s + 6.0) * y1 + (6.0 * s - 2.0) * m1;
        (v, dv / h, ddv / (h * h))
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }
}

/// Target radial particle density `f(r)` on the ball of radius `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TargetDensity {
    /// `(3/4π)(2 − r)` on the unit disk.
    Fig7,
    /// `c (1 − r^p)` on the unit ball of `R^d`, `c` fixed by normalization.
    Power { dimension: usize, exponent: f64 },
    /// Monotone interpolation of samples `(r_k, f_k)`; the last knot is the
    /// support edge.
    Tabulated { dimension: usize, curve: Pchip },
}

impl TargetDensity {
    pub fn fig7() -> Self {
        TargetDensity::Fig7
    }

    /// `(2/π)(1 − r²)` on the unit disk.
    pub fn parabolic() -> Self {
        TargetDensity::Power { dimension: 2, exponent: 2.0 }
    }

    pub fn power(dimension: usize, exponent: f64) -> Result<Self> {
        if dimension < 2 || !(exponent > 0.0) {
            return Err(GasError::IncompatibleTarget(format!("power target needs d >= 2 and p > 0, got {dimension}, {exponent}")));
        }
        Ok(TargetDensity::Power { dimension, exponent })
    }

    /// Tabulated target, rescaled to unit mass. Returns the target and the
    /// mass of the raw samples.
    pub fn tabulated(dimension: usize, r: Vec<f64>, f: Vec<f64>) -> Result<(Self, f64)> {
        if dimension < 2 {
            return Err(GasError::InvalidDimension(dimension));
        }
        if r.first().copied() != Some(0.0) {
            return Err(GasError::IncompatibleTarget("tabulated target must start at r = 0".into()));
        }
        let raw = TargetDensity::Tabulated { dimension, curve: Pchip::new(r.clone(), f.clone())? };
        let mass = raw.mass();
        if !(mass > 0.0) {
            return Err(GasError::IncompatibleTarget(format!("target has mass {mass}")));
        }
        let scaled = f.into_iter().map(|v| v / mass).collect();
        Ok((TargetDensity::Tabulated { dimension, curve: Pchip::new(r, scaled)? }, mass))
    }

    /// Reads a two-column `(r, f)` CSV; lines starting with `#` are skipped.
    pub fn from_csv(path: impl AsRef<Path>, dimension: usize) -> Result<(Self, f64)> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let (mut r, mut f) = (Vec::new(), Vec::new());
        for record in reader.records() {
            let record = record?;
            if record.len() < 2 {
                return Err(GasError::Parse(format!("expected two columns, got {}", record.len())));
            }
            let parse = |s: &str| s.parse::<f64>();
            match (parse(&record[0]), parse(&record[1])) {
                (Ok(a), Ok(b)) => {
                    r.push(a);
                    f.push(b);
                }
                // a header row
                _ if r.is_empty() => continue,
                _ => return Err(GasError::Parse(format!("bad target row {:?}", record))),
            }
        }
        Self::tabulated(dimension, r, f)
    }

    pub fn dimension(&self) -> usize {
        match self {
            TargetDensity::Fig7 => 2,
            TargetDensity::Power { dimension, .. } | TargetDensity::Tabulated { dimension, .. } => *dimension,
        }
    }

    pub fn support_radius(&self) -> f64 {
        match self {
            TargetDensity::Fig7 | TargetDensity::Power { .. } => 1.0,
            TargetDensity::Tabulated { curve, .. } => *curve.knots().last().expect("non-empty"),
        }
    }

    fn power_constant(d: usize, p: f64) -> f64 {
        let df = d as f64;
        1.0 / (sphere_area(d) * (1.0 / df - 1.0 / (df + p)))
    }

    /// Analytic (or interpolated) continuation of `f` past the support edge.
    fn extended(&self, r: f64) -> (f64, f64) {
        match self {
            TargetDensity::Fig7 => (3.0 / (4.0 * PI) * (2.0 - r), -3.0 / (4.0 * PI)),
            TargetDensity::Power { dimension, exponent } => {
                let c = Self::power_constant(*dimension, *exponent);
                (c * (1.0 - r.powf(*exponent)), -c * exponent * r.powf(exponent - 1.0))
            }
            TargetDensity::Tabulated { curve, .. } => {
                let (v, dv, _) = curve.eval(r);
                (v, dv)
            }
        }
    }

    /// `f(r)`, zero outside the support.
    pub fn value(&self, r: f64) -> f64 {
        if r > self.support_radius() || r < 0.0 {
            0.0
        } else {
            self.extended(r).0
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        if r > self.support_radius() || r < 0.0 {
            0.0
        } else {
            self.extended(r).1
        }
    }

    /// `[f(0), f'(0), f''(0)/2]`.
    pub fn taylor(&self) -> [f64; 3] {
        match self {
            TargetDensity::Fig7 => [3.0 / (2.0 * PI), -3.0 / (4.0 * PI), 0.0],
            TargetDensity::Power { dimension, exponent } => {
                let c = Self::power_constant(*dimension, *exponent);
                let p = *exponent;
                let f1 = if p == 1.0 { -c } else { 0.0 };
                let f2 = if p == 2.0 { -c } else { 0.0 };
                [c, f1, f2]
            }
            TargetDensity::Tabulated { curve, .. } => {
                let (v, dv, ddv) = curve.eval(0.0);
                [v, dv, 0.5 * ddv]
            }
        }
    }

    /// `∫ f dV` over the support.
    pub fn mass(&self) -> f64 {
        let d = self.dimension();
        let area = sphere_area(d);
        let integrand = |r: f64| area * r.powi(d as i32 - 1) * self.extended(r).0;
        match self {
            TargetDensity::Tabulated { curve, .. } => curve
                .knots()
                .windows(2)
                .map(|w| gauss_legendre(integrand, w[0], w[1], 1))
                .sum(),
            _ => gauss_legendre(integrand, 0.0, self.support_radius(), 64),
        }
    }

    /// Mass of the ball of radius `r ≤ R`.
    pub fn enclosed_mass(&self, r: f64) -> f64 {
        let d = self.dimension();
        let area = sphere_area(d);
        gauss_legendre(|s| area * s.powi(d as i32 - 1) * self.extended(s).0, 0.0, r.min(self.support_radius()), 16)
    }

    /// Rejects targets that are not strictly decreasing, not positive at the
    /// origin, or not normalized.
    pub fn validate(&self) -> Result<()> {
        const SAMPLES: usize = 4001;
        let d = self.dimension();
        if d < 2 {
            return Err(GasError::InvalidDimension(d));
        }
        let radius = self.support_radius();
        let f0 = self.value(0.0);
        if !(f0 > 0.0) || !f0.is_finite() {
            return Err(GasError::IncompatibleTarget(format!("f(0) = {f0} must be finite and positive")));
        }
        let mut previous = f0;
        for k in 1..SAMPLES {
            let r = radius * k as f64 / (SAMPLES - 1) as f64;
            let v = self.value(r);
            if !(v < previous) {
                return Err(GasError::IncompatibleTarget(format!(
                    "target is not strictly decreasing near r = {r:.6} (f = {v} after {previous})"
                )));
            }
            if v < 0.0 {
                return Err(GasError::IncompatibleTarget(format!("target is negative at r = {r:.6}")));
            }
            previous = v;
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(GasError::IncompatibleTarget(format!("target has mass {mass}, expected 1")));
        }
        Ok(())
    }
}

/// `a(q) = (k_d/d) q/g(q)` with its first two derivatives.
fn coefficient_a(weight: &WeightSpec, d: usize, q: f64) -> (f64, f64, f64) {
    let k = geometric_constants(d).map(|c| c.k_d).unwrap_or(f64::NAN) / d as f64;
    let a = |q: f64| k * q / weight.g(q);
    let da = |q: f64| {
        let g = weight.g(q);
        k * (g - q * weight.derivative(q)) / (g * g)
    };
    let h = 1e-5 * q;
    (a(q), da(q), (da(q + h) - da(q - h)) / (2.0 * h))
}

/// `b(q) = g'(q)/g(q)` with its derivative.
fn coefficient_b(weight: &WeightSpec, q: f64) -> (f64, f64) {
    let b = |q: f64| weight.derivative(q) / weight.g(q);
    let h = 1e-5 * q;
    (b(q), (b(q + h) - b(q - h)) / (2.0 * h))
}

fn check_weight(weight: &WeightSpec) -> Result<()> {
    match weight.monotonicity() {
        None => Err(GasError::MonotonicityTagRequired),
        Some(m) if m.is_strict() => Ok(()),
        Some(m) => Err(GasError::WrongRegime(format!("inverse design needs a strictly monotone weight, got {m:?}"))),
    }
}

/// Centre charge `q_c` solving `a(q_c) f(0) = 1`.
pub fn saddle_charge(target: &TargetDensity, weight: &WeightSpec) -> Result<f64> {
    check_weight(weight)?;
    let d = target.dimension();
    let f0 = target.value(0.0);
    if !(f0 > 0.0) || !f0.is_finite() {
        return Err(GasError::IncompatibleTarget(format!("f(0) = {f0} must be finite and positive")));
    }
    let residual = |q: f64| coefficient_a(weight, d, q).0 * f0 - 1.0;
    // scan a broad logarithmic bracket for the first sign change
    let grid: Vec<f64> = (0..=640).map(|k| 10f64.powf(-8.0 + 16.0 * k as f64 / 640.0)).collect();
    let mut bracket = None;
    for w in grid.windows(2) {
        let (fa, fb) = (residual(w[0]), residual(w[1]));
        if fa.is_finite() && fb.is_finite() && fa * fb <= 0.0 {
            bracket = Some((w[0], w[1], fa));
            break;
        }
    }
    let (mut lo, mut hi, mut f_lo) =
        bracket.ok_or_else(|| GasError::IncompatibleTarget("a(q) f(0) = 1 has no root in [1e-8, 1e8]".into()))?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = residual(mid);
        if fm == 0.0 || (hi - lo) <= 1e-15 * mid {
            lo = mid;
            hi = mid;
            break;
        }
        if fm * f_lo < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = fm;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Linearization of the planar system at `(q_c, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleAnalysis {
    pub charge: f64,
    /// `−a'(q_c) f(0)`, eigenvalue along the `q` axis.
    pub lambda_q: f64,
    /// `−b(q_c)`, eigenvalue of the branch entering `ξ > 0`.
    pub lambda_xi: f64,
}

impl SaddleAnalysis {
    pub fn is_saddle(&self) -> bool {
        self.lambda_q * self.lambda_xi < 0.0
    }
}

pub fn saddle_analysis(target: &TargetDensity, weight: &WeightSpec) -> Result<SaddleAnalysis> {
    let q = saddle_charge(target, weight)?;
    let (_, da, _) = coefficient_a(weight, target.dimension(), q);
    let (b, _) = coefficient_b(weight, q);
    Ok(SaddleAnalysis { charge: q, lambda_q: -da * target.value(0.0), lambda_xi: -b })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControl {
    /// Starting offset `ξ_ε = epsilon × R^d`.
    pub epsilon: f64,
    /// Relative local error per RK4 step.
    pub tolerance: f64,
    /// Largest `Δξ` per step as a fraction of `R^d`.
    pub max_step_fraction: f64,
    pub max_steps: usize,
    /// Allowed shortfall of the accumulated mass at the support edge.
    pub mass_tolerance: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            epsilon: 1e-8,
            tolerance: 1e-11,
            max_step_fraction: 1.0 / 2000.0,
            max_steps: 1_000_000,
            mass_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    /// `r^d`
    pub xi: f64,
    /// Target mass inside radius `ξ^{1/d}`.
    pub mass: f64,
    /// `ν(q) = (|S^{d−1}|/d) f |dξ/dq|`.
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCurve {
    pub dimension: usize,
    /// Ordered by increasing `ξ`.
    pub points: Vec<CurvePoint>,
    pub saddle: SaddleAnalysis,
    /// Unit direction `(dq, dξ)` of departure from the saddle.
    pub unstable_direction: [f64; 2],
    /// `q ≈ q_c + K1 r + K2 r²` near the centre.
    pub departure: [f64; 2],
    pub xi_epsilon: f64,
    /// Charge at the support edge.
    pub terminal_charge: f64,
    pub terminal_xi: f64,
    pub mass: f64,
    /// True when `g` increases, so charges decrease outward.
    pub increasing_weight: bool,
}

impl ManifoldCurve {
    /// Charge support `[min, max]` of the reconstructed law.
    pub fn charge_range(&self) -> (f64, f64) {
        let (a, b) = (self.saddle.charge, self.terminal_charge);
        (a.min(b), a.max(b))
    }
}

struct Field<'a> {
    target: &'a TargetDensity,
    weight: &'a WeightSpec,
    d: usize,
    area_over_d: f64,
    sigma: f64,
}

impl Field<'_> {
    fn f_xi(&self, xi: f64) -> f64 {
        self.target.extended(xi.max(0.0).powf(1.0 / self.d as f64)).0
    }

    fn rhs(&self, y: [f64; 3]) -> [f64; 3] {
        let [q, xi, _] = y;
        let (a, _, _) = coefficient_a(self.weight, self.d, q);
        let (b, _) = coefficient_b(self.weight, q);
        let f = self.f_xi(xi);
        let dxi = -b * xi;
        [self.sigma * (1.0 - a * f), self.sigma * dxi, self.sigma * self.area_over_d * f * dxi]
    }

    fn nu(&self, q: f64, xi: f64) -> f64 {
        let (a, _, _) = coefficient_a(self.weight, self.d, q);
        let (b, _) = coefficient_b(self.weight, q);
        let f = self.f_xi(xi);
        self.area_over_d * f * (b * xi / (1.0 - a * f)).abs()
    }

    fn rk4(&self, y: [f64; 3], h: f64) -> [f64; 3] {
        let add = |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
        let k1 = self.rhs(y);
        let k2 = self.rhs(add(y, k1, 0.5 * h));
        let k3 = self.rhs(add(y, k2, 0.5 * h));
        let k4 = self.rhs(add(y, k3, h));
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            y[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        ]
    }
}

/// Follows the equilibrium branch from the saddle until the accumulated
/// target mass reaches 1.
pub fn integrate_unstable_manifold(target: &TargetDensity, weight: &WeightSpec, control: &StepControl) -> Result<ManifoldCurve> {
    target.validate()?;
    let saddle = saddle_analysis(target, weight)?;
    if !saddle.is_saddle() {
        return Err(GasError::IncompatibleTarget(format!(
            "fixed point at q = {} is not a saddle (eigenvalues {}, {}); q/g(q) must vary opposite to g",
            saddle.charge, saddle.lambda_q, saddle.lambda_xi
        )));
    }
    let d = target.dimension();
    let df = d as f64;
    let q_c = saddle.charge;
    let xi_end = target.support_radius().powi(d as i32);
    let (a, da, dda) = coefficient_a(weight, d, q_c);
    let (b, db) = coefficient_b(weight, q_c);
    let [f0, f1, f2] = target.taylor();
    // series solution of −b r q'(r)/d = 1 − a(q) f(r) at orders r and r²
    let k1 = -df * a * f1 / (-b + df * da * f0);
    let k2 = df * (-a * f2 - da * k1 * f1 - 0.5 * dda * k1 * k1 * f0 + db * k1 * k1 / df) / (-2.0 * b + df * da * f0);
    let xi_eps = control.epsilon * xi_end;
    let r_eps = xi_eps.powf(1.0 / df);
    let q_eps = q_c + k1 * r_eps + k2 * r_eps * r_eps;
    let area = sphere_area(d);
    let m_eps = area * (f0 * r_eps.powf(df) / df + f1 * r_eps.powf(df + 1.0) / (df + 1.0) + f2 * r_eps.powf(df + 2.0) / (df + 2.0));
    let direction = {
        let (dq, dx) = (q_eps - q_c, xi_eps);
        let norm = dq.hypot(dx);
        [dq / norm, dx / norm]
    };
    let field = Field { target, weight, d, area_over_d: area / df, sigma: -b.signum() };

    let nu_start = if k1.abs() < 1e-14 && d == 2 && k2 != 0.0 { field.area_over_d * f0 / k2.abs() } else { 0.0 };
    let mut points = vec![
        CurvePoint { q: q_c, xi: 0.0, mass: 0.0, nu: nu_start },
        CurvePoint { q: q_eps, xi: xi_eps, mass: m_eps, nu: field.nu(q_eps, xi_eps) },
    ];
    let mut y = [q_eps, xi_eps, m_eps];
    let max_dxi = control.max_step_fraction * xi_end;
    let mut h = 0.01 / b.abs();
    let admissible = |y: &[f64; 3]| y[0] > 0.0 && y[1] >= 0.0 && y.iter().all(|v| v.is_finite());
    let mut done = false;
    for _ in 0..control.max_steps {
        let full = field.rk4(y, h);
        let half = field.rk4(field.rk4(y, 0.5 * h), 0.5 * h);
        let err = (0..3)
            .map(|k| (half[k] - full[k]).abs() / (1e-14 + control.tolerance * half[k].abs().max(y[k].abs())))
            .fold(0.0, f64::max);
        if !admissible(&half) {
            if h < 1e-14 {
                return Err(GasError::Integration(format!("trajectory left the quadrant at q = {}, ξ = {}", y[0], y[1])));
            }
            h *= 0.25;
            continue;
        }
        if err > 1.0 || half[1] - y[1] > max_dxi {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
            continue;
        }
        let mut next = [0.0; 3];
        for k in 0..3 {
            next[k] = half[k] + (half[k] - full[k]) / 15.0;
        }
        if next[1] >= xi_end || next[2] >= 1.0 {
            // locate the first of ξ = R^d, mass = 1 inside this step
            let event = |s: f64| {
                let z = field.rk4(field.rk4(y, 0.5 * s), 0.5 * s);
                ((z[1] - xi_end) / xi_end).max(z[2] - 1.0)
            };
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if event(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-15 * h {
                    break;
                }
            }
            next = field.rk4(field.rk4(y, 0.25 * (lo + hi)), 0.25 * (lo + hi));
            done = true;
        }
        if !admissible(&next) {
            return Err(GasError::Integration(format!("trajectory left the quadrant at q = {}, ξ = {}", next[0], next[1])));
        }
        y = next;
        points.push(CurvePoint { q: y[0], xi: y[1], mass: y[2], nu: field.nu(y[0], y[1]) });
        if done {
            break;
        }
        h *= (0.9 * err.max(1e-10).powf(-0.2)).min(4.0);
    }
    if !done {
        return Err(GasError::Integration(format!("no termination after {} steps", control.max_steps)));
    }
    if y[2] < 1.0 - control.mass_tolerance {
        return Err(GasError::IncompatibleTarget(format!(
            "support exhausted at mass {} before reaching 1",
            y[2]
        )));
    }
    Ok(ManifoldCurve {
        dimension: d,
        points,
        saddle,
        unstable_direction: direction,
        departure: [k1, k2],
        xi_epsilon: xi_eps,
        terminal_charge: y[0],
        terminal_xi: y[1],
        mass: y[2],
        increasing_weight: b > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub law: ChargeDistribution,
    /// `∫ν` of the raw tabulation, before rescaling to 1.
    pub raw_mass: f64,
}

/// Largest renormalization of `ν` that is accepted silently.
pub const MASS_DEFECT_LIMIT: f64 = 1e-4;

/// Tabulates `ν(q)` along the curve.
pub fn reconstruct_charge_density(curve: &ManifoldCurve) -> Result<Reconstruction> {
    let mut rows: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.q, p.nu)).collect();
    if let Some(p) = rows.iter().find(|p| !(p.1 >= 0.0) || !p.1.is_finite()) {
        return Err(GasError::Integration(format!("negative or non-finite density {} at q = {}", p.1, p.0)));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.dedup_by(|a, b| a.0 == b.0);
    let (q, nu): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let (law, raw_mass) = ChargeDistribution::tabulated_normalized(q, nu)?;
    if (raw_mass - 1.0).abs() > MASS_DEFECT_LIMIT {
        return Err(GasError::Integration(format!("reconstructed mass {raw_mass} differs from 1 by more than {MASS_DEFECT_LIMIT}")));
    }
    Ok(Reconstruction { law, raw_mass })
}

/// Full pipeline: target and weight to a `GasSpec`.
pub fn design(target: &TargetDensity, weight: &WeightSpec, control: &StepControl) -> Result<(ManifoldCurve, Reconstruction, GasSpec)> {
    let curve = integrate_unstable_manifold(target, weight, control)?;
    let rec = reconstruct_charge_density(&curve)?;
    let spec = GasSpec::new(target.dimension(), weight.clone(), rec.law.clone());
    Ok((curve, rec, spec))
}

/// Sup-norm distance between the predicted density of `spec` and `target`
/// over `r < fraction × R`.
pub fn pushforward_error(spec: &GasSpec, target: &TargetDensity, fraction: f64) -> Result<f64> {
    let profile = continuous_profile(spec)?;
    let edge = fraction * target.support_radius();
    Ok((0..=400)
        .map(|k| {
            let r = edge * k as f64 / 400.0;
            (profile.density(r) - target.value(r)).abs()
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripOptions {
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub bins: usize,
    /// Bins with centre below `inner_fraction × R` enter the comparison.
    pub inner_fraction: f64,
    pub schedule: AnnealSchedule,
    pub control: StepControl,
}

impl Default for RoundtripOptions {
    fn default() -> Self {
        RoundtripOptions {
            n: 1000,
            replicas: 100,
            seed: 0,
            bins: 16,
            inner_fraction: 0.95,
            schedule: AnnealSchedule::fast(),
            control: StepControl::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub saddle_charge: f64,
    pub terminal_charge: f64,
    pub raw_mass: f64,
    /// `sqrt(Σ(ρ_b − f_b)² / Σ f_b²)` over the inner bins, with `f_b` the bin average of `f`.
    pub rms_relative: f64,
    /// `max_b |ρ_b − f_b| / f(0)` over the inner bins.
    pub sup_relative: f64,
    pub ordering_metric: f64,
    pub converged_replicas: usize,
    pub histogram: RadialHistogram,
    /// Bin averages of the target.
    pub target_bins: Vec<f64>,
}

/// Designs `ν`, simulates the resulting gas and compares the ensemble radial
/// density with the target.
pub fn verify_roundtrip(target: &TargetDensity, weight: &WeightSpec, options: &RoundtripOptions) -> Result<RoundtripReport> {
    let (curve, rec, spec) = design(target, weight, &options.control)?;
    let results: Vec<_> = (0..options.replicas)
        .into_par_iter()
        .map(|k| {
            let opts = MinimizeOptions {
                schedule: options.schedule.clone(),
                seed: options.seed.wrapping_add(k as u64),
                ..Default::default()
            };
            minimize(&spec, options.n, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let converged_replicas = results.iter().filter(|r| r.converged).count();
    let configs: Vec<_> = results.into_iter().map(|r| r.config).collect();
    let radius = target.support_radius();
    let histogram = radial_profiles_within(&configs, options.bins, radius)?;
    let d = target.dimension();
    let target_bins: Vec<f64> = (0..histogram.bins())
        .map(|b| {
            let (lo, hi) = (histogram.edges[b], histogram.edges[b + 1]);
            let m = gauss_legendre(|r| sphere_area(d) * r.powi(d as i32 - 1) * target.value(r), lo, hi, 4);
            m / (ball_volume(d) * (hi.powi(d as i32) - lo.powi(d as i32)))
        })
        .collect();
    let centers = histogram.centers();
    let (mut num, mut den, mut sup) = (0.0, 0.0, 0.0f64);
    for b in 0..histogram.bins() {
        if centers[b] < options.inner_fraction * radius {
            let diff = histogram.density[b] - target_bins[b];
            num += diff * diff;
            den += target_bins[b] * target_bins[b];
            sup = sup.max(diff.abs() / target.value(0.0));
        }
    }
    let metrics = configs.iter().map(ordering_metric).collect::<Result<Vec<_>>>()?;
    Ok(RoundtripReport {
        saddle_charge: curve.saddle.charge,
        terminal_charge: curve.terminal_charge,
        raw_mass: rec.raw_mass,
        rms_relative: (num / den).sqrt(),
        sup_relative: sup,
        ordering_metric: metrics.iter().sum::<f64>() / metrics.len() as f64,
        converged_replicas,
        histogram,
        target_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasmodel::{CustomWeight, Monotonicity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn power_weight(c: f64, alpha: f64) -> WeightSpec {
        let tag = if alpha > 0.0 { Monotonicity::Increasing } else { Monotonicity::Decreasing };
        WeightSpec::Custom(
            CustomWeight::new(format!("{c} q^{alpha}"), move |q| c * q.powf(alpha), Some(tag))
                .with_derivative(move |q| c * alpha * q.powf(alpha - 1.0)),
        )
    }

    #[test]
    fn fig7_saddle_charge() {
        let q = saddle_charge(&TargetDensity::fig7(), &WeightSpec::Inverse).unwrap();
        assert!((q - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((q - 0.81650).abs() < 1e-5);
    }

    #[test]
    fn parabolic_saddle_charge() {
        let q = saddle_charge(&TargetDensity::parabolic(), &WeightSpec::Inverse).unwrap();
        assert!((q - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scaled_weight_moves_root() {
        let t = TargetDensity::fig7();
        for c in [0.5, 2.0, 7.0] {
            let w = power_weight(c, -1.0);
            let q = saddle_charge(&t, &w).unwrap();
            // π q²/c · 3/(2π) = 1
            assert!((q - (2.0 * c / 3.0).sqrt()).abs() < 1e-12 * q.max(1.0));
            let (a, _, _) = coefficient_a(&w, 2, q);
            assert!((a * t.value(0.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fig7_curve_terminates_at_unit_radius() {
        let curve = integrate_unstable_manifold(&TargetDensity::fig7(), &WeightSpec::Inverse, &StepControl::default()).unwrap();
        assert!((curve.terminal_xi - 1.0).abs() < 1e-6, "{}", curve.terminal_xi);
        assert!((curve.mass - 1.0).abs() < 1e-6);
        assert!(curve.points.windows(2).all(|w| w[1].xi > w[0].xi && w[1].q > w[0].q));
        assert!(curve.saddle.is_saddle());
    }

    #[test]
    fn reconstruction_conserves_mass_and_pushes_forward() {
        for target in [TargetDensity::fig7(), TargetDensity::parabolic()] {
            let (curve, rec, spec) = design(&target, &WeightSpec::Inverse, &StepControl::default()).unwrap();
            assert!((rec.raw_mass - 1.0).abs() < 1e-4, "{}", rec.raw_mass);
            let (lo, hi) = rec.law.support();
            assert_eq!(lo, curve.saddle.charge);
            assert!((hi - curve.terminal_charge).abs() < 1e-14);
            let err = pushforward_error(&spec, &target, 0.95).unwrap();
            assert!(err < 1e-3, "{target:?}: {err}");
        }
    }

    #[test]
    fn epsilon_robustness() {
        let t = TargetDensity::fig7();
        let base = StepControl::default();
        let half = StepControl { epsilon: 0.5 * base.epsilon, ..base };
        let a = reconstruct_charge_density(&integrate_unstable_manifold(&t, &WeightSpec::Inverse, &base).unwrap()).unwrap();
        let b = reconstruct_charge_density(&integrate_unstable_manifold(&t, &WeightSpec::Inverse, &half).unwrap()).unwrap();
        let (lo, hi) = a.law.support();
        let sup = (0..=1000)
            .map(|k| {
                let q = lo + (hi - lo) * k as f64 / 1000.0;
                (a.law.density(q).unwrap() - b.law.density(q).unwrap()).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup < 1e-4, "{sup}");
    }

    #[test]
    fn increasing_weight_runs_outward_decreasing_charges() {
        let w = power_weight(1.0, 2.0);
        let t = TargetDensity::parabolic();
        let (curve, _, spec) = design(&t, &w, &StepControl::default()).unwrap();
        assert!(curve.increasing_weight);
        assert!(curve.points.windows(2).all(|p| p[1].q < p[0].q));
        assert!(pushforward_error(&spec, &t, 0.95).unwrap() < 1e-3);
    }

    #[test]
    fn linear_weight_has_no_saddle() {
        let err = integrate_unstable_manifold(&TargetDensity::parabolic(), &WeightSpec::Linear, &StepControl::default()).unwrap_err();
        assert!(matches!(err, GasError::IncompatibleTarget(_)), "{err:?}");
    }

    #[test]
    fn flat_and_increasing_targets_rejected() {
        let flat = TargetDensity::tabulated(2, vec![0.0, 0.5, 1.0], vec![1.0, 1.0, 1.0]).unwrap().0;
        let rising = TargetDensity::tabulated(2, vec![0.0, 0.5, 1.0], vec![0.5, 1.0, 1.5]).unwrap().0;
        for t in [flat, rising] {
            let err = integrate_unstable_manifold(&t, &WeightSpec::Inverse, &StepControl::default()).unwrap_err();
            assert!(matches!(err, GasError::IncompatibleTarget(_)));
        }
        assert!(matches!(
            saddle_charge(&TargetDensity::fig7(), &WeightSpec::default()),
            Err(GasError::WrongRegime(_))
        ));
    }

    #[test]
    fn tabulated_target_matches_closed_form() {
        let r: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
        let f: Vec<f64> = r.iter().map(|x| 3.0 / (4.0 * PI) * (2.0 - x)).collect();
        let (t, mass) = TargetDensity::tabulated(2, r, f).unwrap();
        assert!((mass - 1.0).abs() < 1e-12);
        let q = saddle_charge(&t, &WeightSpec::Inverse).unwrap();
        assert!((q - (2.0f64 / 3.0).sqrt()).abs() < 1e-10);
        let (_, _, spec) = design(&t, &WeightSpec::Inverse, &StepControl::default()).unwrap();
        assert!(pushforward_error(&spec, &TargetDensity::fig7(), 0.95).unwrap() < 1e-3);
    }

    #[test]
    fn pchip_preserves_monotonicity() {
        let p = Pchip::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![5.0, 4.9, 2.0, 1.9, 0.0]).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=400 {
            let (v, _, _) = p.eval(4.0 * k as f64 / 400.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert_eq!(p.eval(2.0).0, 2.0);
    }

    #[test]
    fn csv_target_round_trip() {
        let dir = std::env::temp_dir().join(format!("hetgas-target-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.csv");
        let mut body = String::from("# parabolic\nr,f\n");
        for k in 0..=100 {
            let r = k as f64 / 100.0;
            body.push_str(&format!("{r},{}\n", 2.0 / PI * (1.0 - r * r)));
        }
        std::fs::write(&path, body).unwrap();
        let (t, mass) = TargetDensity::from_csv(&path, 2).unwrap();
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((t.value(0.3) - 2.0 / PI * 0.91).abs() < 1e-5);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn random_pairs_are_saddles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let d = rng.random_range(2..=3);
            let p = rng.random_range(1.0..3.0);
            let t = TargetDensity::power(d, p).unwrap();
            let c = rng.random_range(0.5..2.0);
            // decreasing g, or g growing faster than linearly
            let alpha = if rng.random::<bool>() { -rng.random_range(0.2..2.0) } else { rng.random_range(1.2..3.0) };
            let s = saddle_analysis(&t, &power_weight(c, alpha)).unwrap();
            assert!(s.is_saddle(), "d={d} p={p} c={c} alpha={alpha}: {s:?}");
        }
    }
}
