use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};

/// Dimension-dependent constants of the Coulomb problem in `R^d`.
///
/// `c_d` is the prefactor of the Coulomb kernel derivative (`W'(r) = c_d r^{1-d}`),
/// `k_d = c_d |S_{d-1}|` the constant of `ΔW = k_d δ_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricConstants {
    pub dimension: usize,
    pub c_d: f64,
    pub k_d: f64,
    pub sphere_area: f64,
    pub ball_volume: f64,
}

/// `Γ(d/2)` for a positive integer `d`, by the half-integer recursion.
fn gamma_half(d: usize) -> f64 {
    let mut value = if d % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if d % 2 == 0 { 1.0 } else { 0.5 };
    let target = d as f64 / 2.0;
    while x < target - 1e-12 {
        value *= x;
        x += 1.0;
    }
    value
}

/// Surface measure of the unit sphere `S_{d-1} ⊂ R^d`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Volume of the unit ball in `R^d`.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

pub fn geometric_constants(d: usize) -> Result<GeometricConstants> {
    if d < 2 {
        return Err(GasError::InvalidDimension(d));
    }
    let c_d = if d == 2 { 1.0 } else { (d - 2) as f64 };
    let area = sphere_area(d);
    Ok(GeometricConstants {
        dimension: d,
        c_d,
        k_d: c_d * area,
        sphere_area: area,
        ball_volume: area / d as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn planar_constants() {
        let g = geometric_constants(2).unwrap();
        assert_eq!(g.c_d, 1.0);
        assert_relative_eq!(g.sphere_area, 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(g.k_d, 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(g.ball_volume, PI, epsilon = 1e-14);
    }

    #[test]
    fn three_and_four_dimensions() {
        let g3 = geometric_constants(3).unwrap();
        assert_eq!(g3.c_d, 1.0);
        assert_relative_eq!(g3.sphere_area, 4.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(g3.k_d, 4.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(g3.ball_volume, 4.0 * PI / 3.0, epsilon = 1e-14);

        let g4 = geometric_constants(4).unwrap();
        assert_eq!(g4.c_d, 2.0);
        assert_relative_eq!(g4.sphere_area, 2.0 * PI * PI, epsilon = 1e-13);
        assert_relative_eq!(g4.k_d, 4.0 * PI * PI, epsilon = 1e-13);
    }

    #[test]
    fn rejects_line() {
        assert_eq!(geometric_constants(1), Err(GasError::InvalidDimension(1)));
        assert_eq!(geometric_constants(0), Err(GasError::InvalidDimension(0)));
    }

    #[test]
    fn ball_volume_recursion() {
        // |B_d| = 2π/d |B_{d-2}|
        for d in 3..9 {
            let ratio = ball_volume(d) / ball_volume(d - 2);
            assert_relative_eq!(ratio, 2.0 * PI / d as f64, epsilon = 1e-12);
        }
    }
}
