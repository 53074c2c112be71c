use serde::{Deserialize, Serialize};

use super::geometry::geometric_constants;
use crate::error::{GasError, Result};

/// Pair interaction family. Repulsion between charges `q, q'` is `-q q' W(r)`.
///
/// `Riesz(eta)` has `W'(r) = c_d r^{-d+1-eta}`; `Coulomb` is `Riesz(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    #[default]
    Coulomb,
    Riesz {
        eta: f64,
    },
}

impl KernelSpec {
    pub fn eta(&self) -> f64 {
        match *self {
            KernelSpec::Coulomb => 0.0,
            KernelSpec::Riesz { eta } => eta,
        }
    }

    pub fn is_coulomb(&self) -> bool {
        self.eta() == 0.0
    }

    /// Singularity exponent `s = d - 2 + eta`.
    pub fn exponent(&self, d: usize) -> f64 {
        d as f64 - 2.0 + self.eta()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if d < 2 {
            return Err(GasError::InvalidDimension(d));
        }
        let eta = self.eta();
        if !eta.is_finite() {
            return Err(GasError::InvalidKernel(format!("eta = {eta} is not finite")));
        }
        if eta <= -(d as f64 + 2.0) {
            return Err(GasError::InvalidKernel(format!(
                "eta = {eta} must exceed -(d+2) = {}",
                -(d as f64 + 2.0)
            )));
        }
        Ok(())
    }

    /// `W(r)`: `c_d log r` when `s = 0`, `-c_d r^{-s}/s` otherwise.
    pub fn value(&self, d: usize, r: f64) -> Result<f64> {
        self.validate(d)?;
        if !(r > 0.0) {
            return Err(GasError::Domain(format!("kernel evaluated at r = {r}")));
        }
        Ok(PairKernel::new(self, d)?.value(r))
    }

    /// `W'(r) = c_d r^{-s-1}`.
    pub fn derivative(&self, d: usize, r: f64) -> Result<f64> {
        self.validate(d)?;
        if !(r > 0.0) {
            return Err(GasError::Domain(format!("kernel derivative at r = {r}")));
        }
        Ok(PairKernel::new(self, d)?.derivative(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PowerPath {
    Log,
    /// `s` is an integer: powers of `r`.
    Integer(i32),
    /// `2s` is an odd integer: powers of `sqrt(r)`.
    Half(i32),
    General(f64),
}

/// Kernel compiled for fast evaluation in the pair loops, working from squared
/// distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKernel {
    c: f64,
    s: f64,
    path: PowerPath,
}

impl PairKernel {
    pub fn new(spec: &KernelSpec, d: usize) -> Result<Self> {
        spec.validate(d)?;
        let c = geometric_constants(d)?.c_d;
        let s = spec.exponent(d);
        let path = if s == 0.0 {
            PowerPath::Log
        } else if s.fract() == 0.0 && s.abs() < 64.0 {
            PowerPath::Integer(s as i32)
        } else if (2.0 * s).fract() == 0.0 && s.abs() < 64.0 {
            PowerPath::Half((2.0 * s) as i32)
        } else {
            PowerPath::General(s)
        };
        Ok(PairKernel { c, s, path })
    }

    pub fn exponent(&self) -> f64 {
        self.s
    }

    pub fn prefactor(&self) -> f64 {
        self.c
    }

    /// `r^{-s}` from `r^2`.
    #[inline(always)]
    fn inv_pow_s(&self, r2: f64) -> f64 {
        match self.path {
            PowerPath::Log => 1.0,
            PowerPath::Integer(k) => r2.sqrt().powi(-k),
            PowerPath::Half(k) => r2.sqrt().sqrt().powi(-k),
            PowerPath::General(s) => r2.powf(-0.5 * s),
        }
    }

    /// Returns `(W(r), W'(r)/r)` for squared distance `r2`.
    #[inline(always)]
    pub fn eval_sq(&self, r2: f64) -> (f64, f64) {
        match self.path {
            PowerPath::Log => (0.5 * self.c * r2.ln(), self.c / r2),
            _ => {
                let t = self.inv_pow_s(r2);
                (-self.c * t / self.s, self.c * t / r2)
            }
        }
    }

    /// `W'(r)/r` only.
    #[inline(always)]
    pub fn dw_over_r_sq(&self, r2: f64) -> f64 {
        match self.path {
            PowerPath::Log => self.c / r2,
            _ => self.c * self.inv_pow_s(r2) / r2,
        }
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        self.eval_sq(r * r).0
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        self.eval_sq(r * r).1 * r
    }

    /// `W''(r)`.
    pub fn second_derivative(&self, r: f64) -> f64 {
        -(self.s + 1.0) * self.derivative(r) / r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coulomb_values() {
        let k = KernelSpec::Coulomb;
        assert_relative_eq!(k.value(2, 2.0).unwrap(), 2.0f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(k.value(2, 2.0).unwrap(), 0.693147, epsilon = 1e-6);
        assert_relative_eq!(k.value(3, 0.5).unwrap(), -2.0, epsilon = 1e-15);
        // d = 4: W = -1/r^2, W' = 2/r^3
        assert_relative_eq!(k.value(4, 2.0).unwrap(), -0.25, epsilon = 1e-15);
        assert_relative_eq!(k.derivative(4, 2.0).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn riesz_normalization() {
        let k = KernelSpec::Riesz { eta: 0.5 };
        assert_relative_eq!(k.value(2, 1.0).unwrap(), -2.0, epsilon = 1e-15);
        assert_relative_eq!(k.derivative(2, 4.0).unwrap(), 4.0f64.powf(-1.5), epsilon = 1e-15);
        let sub = KernelSpec::Riesz { eta: -0.5 };
        assert_relative_eq!(sub.value(2, 4.0).unwrap(), 2.0 * 2.0, epsilon = 1e-14);
        // logarithmic interaction in three dimensions
        let log3 = KernelSpec::Riesz { eta: -1.0 };
        assert_relative_eq!(log3.value(3, 3.0).unwrap(), 3.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn riesz_zero_is_coulomb() {
        for d in 2..6 {
            for &r in &[0.1, 0.7, 3.0] {
                let a = KernelSpec::Coulomb.value(d, r).unwrap();
                let b = KernelSpec::Riesz { eta: 0.0 }.value(d, r).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn general_path_matches_closed_form() {
        let k = PairKernel::new(&KernelSpec::Riesz { eta: 0.3 }, 2).unwrap();
        let s = 0.3;
        for &r in &[0.2f64, 1.0, 2.5] {
            assert_relative_eq!(k.value(r), -r.powf(-s) / s, epsilon = 1e-13);
            assert_relative_eq!(k.derivative(r), r.powf(-s - 1.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            KernelSpec::Coulomb.value(2, 0.0),
            Err(GasError::Domain(_))
        ));
        assert!(matches!(
            KernelSpec::Coulomb.value(2, -1.0),
            Err(GasError::Domain(_))
        ));
        assert!(matches!(
            KernelSpec::Riesz { eta: -4.0 }.value(2, 1.0),
            Err(GasError::InvalidKernel(_))
        ));
        assert!(KernelSpec::Riesz { eta: -3.9 }.value(2, 1.0).is_ok());
    }

    #[test]
    fn strictly_increasing_on_log_grid() {
        for d in 2..5 {
            for &eta in &[-3.5, -1.0, -0.5, 0.0, 0.5, 1.5] {
                let k = KernelSpec::Riesz { eta };
                if k.validate(d).is_err() {
                    continue;
                }
                let mut prev = f64::NEG_INFINITY;
                for i in 0..200 {
                    let r = 10f64.powf(-3.0 + 6.0 * i as f64 / 199.0);
                    let w = k.value(d, r).unwrap();
                    assert!(w > prev, "d={d} eta={eta} r={r}");
                    prev = w;
                }
            }
        }
    }

    #[test]
    fn coulomb_is_harmonic_off_origin() {
        let h = 1e-4;
        for d in 2..5 {
            let k = PairKernel::new(&KernelSpec::Coulomb, d).unwrap();
            for &r in &[0.5, 1.0, 2.0] {
                let mut x = vec![0.0; d];
                x[0] = r * 0.6;
                x[1] = r * 0.8;
                let w = |p: &[f64]| k.value(p.iter().map(|v| v * v).sum::<f64>().sqrt());
                let mut lap = 0.0;
                for a in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[a] += h;
                    xm[a] -= h;
                    lap += (w(&xp) - 2.0 * w(&x) + w(&xm)) / (h * h);
                }
                assert!(lap.abs() < 1e-4, "d={d} r={r} lap={lap}");
            }
        }
    }
}
