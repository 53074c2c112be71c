use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};

/// Embedded surface `{F = 0} ⊂ R^3` on which particles are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ManifoldKind {
    /// `x² + y² + z² - 1`
    UnitSphere,
    /// `(1 - sqrt(x² + y²))² + z² - 1/4`
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    #[serde(default = "default_iterations")]
    pub newton_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_iterations() -> usize {
    20
}

fn default_tolerance() -> f64 {
    1e-12
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.5;

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind) -> Self {
        ManifoldSpec {
            kind,
            newton_iterations: default_iterations(),
            tolerance: default_tolerance(),
        }
    }

    pub fn ambient_dimension(&self) -> usize {
        3
    }

    /// Surface area of the manifold.
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match self.kind {
            ManifoldKind::UnitSphere => 4.0 * PI,
            ManifoldKind::Torus => 4.0 * PI * PI * TORUS_MAJOR * TORUS_MINOR,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::UnitSphere => x[0] * x[0] + x[1] * x[1] + x[2] * x[2] - 1.0,
            ManifoldKind::Torus => {
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
                (TORUS_MAJOR - rho).powi(2) + x[2] * x[2] - TORUS_MINOR * TORUS_MINOR
            }
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            ManifoldKind::UnitSphere => {
                for k in 0..3 {
                    out[k] = 2.0 * x[k];
                }
            }
            ManifoldKind::Torus => {
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt().max(1e-300);
                let factor = -2.0 * (TORUS_MAJOR - rho) / rho;
                out[0] = factor * x[0];
                out[1] = factor * x[1];
                out[2] = 2.0 * x[2];
            }
        }
    }

    /// Moves `x` onto the surface by Newton steps along `∇F`.
    pub fn project(&self, x: &mut [f64]) -> Result<()> {
        // exact closest points are cheap for both surfaces; use them as the
        // starting guess and polish with Newton
        match self.kind {
            ManifoldKind::UnitSphere => {
                let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                if n > 1e-300 {
                    x.iter_mut().for_each(|v| *v /= n);
                } else {
                    x.copy_from_slice(&[0.0, 0.0, 1.0]);
                }
            }
            ManifoldKind::Torus => {
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let (ux, uy) = if rho > 1e-300 { (x[0] / rho, x[1] / rho) } else { (1.0, 0.0) };
                let (cx, cy) = (TORUS_MAJOR * ux, TORUS_MAJOR * uy);
                let v = [x[0] - cx, x[1] - cy, x[2]];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let v = if n > 1e-300 { [v[0] / n, v[1] / n, v[2] / n] } else { [ux, uy, 0.0] };
                x[0] = cx + TORUS_MINOR * v[0];
                x[1] = cy + TORUS_MINOR * v[1];
                x[2] = TORUS_MINOR * v[2];
            }
        }
        let mut grad = [0.0; 3];
        for _ in 0..self.newton_iterations {
            let f = self.value(x);
            if f.abs() < self.tolerance {
                return Ok(());
            }
            self.gradient(x, &mut grad);
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            if g2 < 1e-300 {
                break;
            }
            for k in 0..3 {
                x[k] -= f * grad[k] / g2;
            }
        }
        let f = self.value(x);
        if f.abs() < self.tolerance.max(1e-10) {
            Ok(())
        } else {
            Err(GasError::InvalidManifold(format!("projection left |F| = {:e}", f.abs())))
        }
    }

    /// Removes the normal component of `v` at the surface point `x`.
    pub fn tangent_project(&self, x: &[f64], v: &mut [f64]) {
        let mut n = [0.0; 3];
        self.gradient(x, &mut n);
        let n2: f64 = n.iter().map(|a| a * a).sum();
        if n2 < 1e-300 {
            return;
        }
        let dot: f64 = (0..3).map(|k| v[k] * n[k]).sum();
        for k in 0..3 {
            v[k] -= dot * n[k] / n2;
        }
    }

    /// Sampled check that `∇F` does not vanish on the surface.
    pub fn validate(&self) -> Result<()> {
        if self.newton_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(GasError::InvalidManifold("projection parameters must be positive".into()));
        }
        let mut grad = [0.0; 3];
        for i in 0..16 {
            for j in 0..16 {
                let theta = std::f64::consts::PI * (i as f64 + 0.5) / 16.0;
                let phi = 2.0 * std::f64::consts::PI * j as f64 / 16.0;
                let mut x = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                if self.kind == ManifoldKind::Torus {
                    x[0] *= 1.3;
                    x[1] *= 1.3;
                }
                self.project(&mut x)?;
                self.gradient(&x, &mut grad);
                if grad.iter().map(|g| g * g).sum::<f64>() < 1e-12 {
                    return Err(GasError::InvalidManifold("gradient vanishes on the surface".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_surface() {
        for kind in [ManifoldKind::UnitSphere, ManifoldKind::Torus] {
            let m = ManifoldSpec::new(kind);
            for p in [[0.3, -2.0, 0.7], [1e-3, 0.0, 0.2], [5.0, 5.0, -3.0]] {
                let mut x = p;
                m.project(&mut x).unwrap();
                assert!(m.value(&x).abs() < 1e-10, "{kind:?} {x:?}");
            }
            m.validate().unwrap();
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = ManifoldSpec::new(ManifoldKind::Torus);
        let x = [0.9, 0.4, 0.3];
        let mut g = [0.0; 3];
        m.gradient(&x, &mut g);
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fd = (m.value(&xp) - m.value(&xm)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn tangent_projection_is_orthogonal_to_normal() {
        let m = ManifoldSpec::new(ManifoldKind::UnitSphere);
        let x = [0.0, 0.6, 0.8];
        let mut v = [1.0, 1.0, 1.0];
        m.tangent_project(&x, &mut v);
        let dot: f64 = (0..3).map(|k| v[k] * x[k]).sum();
        assert!(dot.abs() < 1e-15);
        assert_eq!(v[0], 1.0);
    }
}
