//! One-dimensional quadrature rules used by the radial integrals.

use std::sync::OnceLock;

use crate::error::{GasError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson rule with Richardson correction and absolute tolerance
/// `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0 });
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut error = 0.0;
    let mut ok = true;
    let value = simpson_step(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut error, &mut ok);
    if !value.is_finite() || !ok {
        return Err(GasError::Quadrature {
            estimate: value,
            error,
            tolerance: tol,
        });
    }
    Ok(Quadrature { value, error })
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    error: &mut f64,
    ok: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || depth == 0 || (b - a).abs() < 1e-15 * (a.abs() + b.abs()) {
        if depth == 0 && delta.abs() > 15.0 * tol {
            *ok = false;
        }
        *error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, error, ok)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, error, ok)
}

const GL_ORDER: usize = 20;

/// Nodes and weights of the Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn default_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_rule(GL_ORDER))
}

/// Composite Gauss–Legendre over `panels` equal panels. The rule never
/// evaluates endpoints, so integrable endpoint singularities are tolerated.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = default_rule();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in nodes.iter().zip(weights) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * total
}

/// Gauss–Legendre on panels that shrink geometrically toward `a`, for
/// integrands with an integrable singularity at the left endpoint.
pub fn gauss_legendre_graded(f: impl Fn(f64) -> f64, a: f64, b: f64, levels: usize) -> f64 {
    let mut total = 0.0;
    let mut hi = b;
    for _ in 0..levels {
        let lo = a + 0.25 * (hi - a);
        total += gauss_legendre(&f, lo, hi, 1);
        hi = lo;
    }
    total + gauss_legendre(&f, a, hi, 1)
}
