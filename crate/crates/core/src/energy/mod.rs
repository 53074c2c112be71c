//! Hamiltonian, forces, mean-field potential and the splitting decomposition.

mod mean_field;
mod splitting;

pub use mean_field::{intensive_energy, mean_field_potential, radial_potential, zeta};
pub use splitting::{splitting_terms, SplitBreakdown};

use rayon::prelude::*;

use crate::error::{GasError, Result};
use crate::gasmodel::{Configuration, GasSpec, PairKernel};

/// Smallest admissible pair distance.
pub const COLLISION_GUARD: f64 = 1e-12;

/// Pair-loop strategy. Both are deterministic; `Parallel` sums each row in
/// index order and reduces rows serially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopMode {
    #[default]
    Serial,
    Parallel,
}

/// Precomputed per-particle data for repeated evaluations with fixed charges.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    spec: &'a GasSpec,
    kernel: PairKernel,
    charges: Vec<f64>,
    /// `N q_i g(q_i)`
    confinement_weight: Vec<f64>,
    mode: LoopMode,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a GasSpec, charges: &[f64]) -> Result<Self> {
        let kernel = spec.pair_kernel()?;
        let n = charges.len() as f64;
        let confinement_weight = charges
            .iter()
            .map(|&q| Ok(n * q * spec.weight.eval(q)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluator {
            spec,
            kernel,
            charges: charges.to_vec(),
            confinement_weight,
            mode: LoopMode::Serial,
        })
    }

    pub fn with_mode(mut self, mode: LoopMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn spec(&self) -> &GasSpec {
        self.spec
    }

    fn dimension(&self) -> usize {
        self.spec.dimension
    }

    /// `N Σ q_i g(q_i) V(x_i)`
    fn confinement_energy(&self, positions: &[f64]) -> f64 {
        let d = self.dimension();
        positions
            .chunks_exact(d)
            .zip(&self.confinement_weight)
            .map(|(x, w)| w * self.spec.confinement.value(x))
            .sum()
    }

    /// `H_N` at `positions`.
    pub fn energy(&self, positions: &[f64]) -> Result<f64> {
        let pair = match self.dimension() {
            2 => pair_energy::<2>(&self.kernel, positions, &self.charges, self.mode)?,
            3 => pair_energy::<3>(&self.kernel, positions, &self.charges, self.mode)?,
            d => pair_energy_dyn(&self.kernel, d, positions, &self.charges)?,
        };
        Ok(self.confinement_energy(positions) - pair)
    }

    /// `H_N` and `F = -∇H_N`; optionally the nearest-neighbour distance of
    /// every particle.
    pub fn energy_forces(&self, positions: &[f64], forces: &mut [f64], nearest: Option<&mut [f64]>) -> Result<f64> {
        self.forces_impl::<true>(positions, forces, nearest)
    }

    /// `F = -∇H_N` without the energy (cheaper for logarithmic kernels).
    pub fn forces_into(&self, positions: &[f64], forces: &mut [f64], nearest: Option<&mut [f64]>) -> Result<()> {
        self.forces_impl::<false>(positions, forces, nearest).map(|_| ())
    }

    fn forces_impl<const E: bool>(&self, positions: &[f64], forces: &mut [f64], nearest: Option<&mut [f64]>) -> Result<f64> {
        let d = self.dimension();
        let mut grad = vec![0.0; d];
        for ((x, f), w) in positions
            .chunks_exact(d)
            .zip(forces.chunks_exact_mut(d))
            .zip(&self.confinement_weight)
        {
            self.spec.confinement.gradient(x, &mut grad);
            for k in 0..d {
                f[k] = -w * grad[k];
            }
        }
        let mut scratch;
        let nearest = match nearest {
            Some(n) => n,
            None => {
                scratch = vec![0.0; self.len()];
                &mut scratch[..]
            }
        };
        let pair = match d {
            2 => pair_forces::<2, E>(&self.kernel, positions, &self.charges, forces, nearest, self.mode)?,
            3 => pair_forces::<3, E>(&self.kernel, positions, &self.charges, forces, nearest, self.mode)?,
            _ => pair_forces_dyn(&self.kernel, d, positions, &self.charges, forces, nearest)?,
        };
        if E {
            Ok(self.confinement_energy(positions) - pair)
        } else {
            Ok(f64::NAN)
        }
    }
}

fn singular(i: usize, j: usize, r2: f64) -> GasError {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    GasError::SingularConfiguration { i, j, distance: r2.sqrt() }
}

const GUARD2: f64 = COLLISION_GUARD * COLLISION_GUARD;

#[inline(always)]
fn point<const D: usize>(positions: &[f64], i: usize) -> [f64; D] {
    let mut p = [0.0; D];
    p.copy_from_slice(&positions[i * D..(i + 1) * D]);
    p
}

/// `Σ_{i≠j} q_i q_j W_ij` (ordered pairs).
fn pair_energy<const D: usize>(kernel: &PairKernel, positions: &[f64], charges: &[f64], mode: LoopMode) -> Result<f64> {
    let n = charges.len();
    let row = |i: usize, full: bool| -> Result<f64> {
        let xi = point::<D>(positions, i);
        let mut acc = 0.0;
        let start = if full { 0 } else { i + 1 };
        for j in start..n {
            if j == i {
                continue;
            }
            let xj = point::<D>(positions, j);
            let mut r2 = 0.0;
            for k in 0..D {
                let t = xi[k] - xj[k];
                r2 += t * t;
            }
            if r2 < GUARD2 {
                return Err(singular(i, j, r2));
            }
            acc += charges[j] * kernel.eval_sq(r2).0;
        }
        Ok(charges[i] * acc)
    };
    match mode {
        LoopMode::Serial => {
            let mut total = 0.0;
            for i in 0..n {
                total += row(i, false)?;
            }
            Ok(2.0 * total)
        }
        LoopMode::Parallel => {
            let rows: Vec<f64> = (0..n).into_par_iter().map(|i| row(i, true)).collect::<Result<_>>()?;
            Ok(rows.iter().sum())
        }
    }
}

fn pair_energy_dyn(kernel: &PairKernel, d: usize, positions: &[f64], charges: &[f64]) -> Result<f64> {
    let n = charges.len();
    let mut total = 0.0;
    for i in 0..n {
        let xi = &positions[i * d..(i + 1) * d];
        for j in i + 1..n {
            let xj = &positions[j * d..(j + 1) * d];
            let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 < GUARD2 {
                return Err(singular(i, j, r2));
            }
            total += charges[i] * charges[j] * kernel.eval_sq(r2).0;
        }
    }
    Ok(2.0 * total)
}

/// Adds the pair forces to `forces` and returns `Σ_{i≠j} q_i q_j W_ij`.
fn pair_forces<const D: usize, const E: bool>(
    kernel: &PairKernel,
    positions: &[f64],
    charges: &[f64],
    forces: &mut [f64],
    nearest: &mut [f64],
    mode: LoopMode,
) -> Result<f64> {
    let n = charges.len();
    match mode {
        LoopMode::Serial => {
            let mut total = 0.0;
            let mut min2 = vec![f64::INFINITY; n];
            for i in 0..n {
                let xi = point::<D>(positions, i);
                let qi = charges[i];
                let mut fi = [0.0; D];
                let mut row = 0.0;
                for j in i + 1..n {
                    let xj = point::<D>(positions, j);
                    let mut dx = [0.0; D];
                    let mut r2 = 0.0;
                    for k in 0..D {
                        dx[k] = xi[k] - xj[k];
                        r2 += dx[k] * dx[k];
                    }
                    if r2 < GUARD2 {
                        return Err(singular(i, j, r2));
                    }
                    let qj = charges[j];
                    let dwr = if E {
                        let (w, dwr) = kernel.eval_sq(r2);
                        row += qj * w;
                        dwr
                    } else {
                        kernel.dw_over_r_sq(r2)
                    };
                    let c = 2.0 * qi * qj * dwr;
                    for k in 0..D {
                        fi[k] += c * dx[k];
                        forces[j * D + k] -= c * dx[k];
                    }
                    if r2 < min2[i] {
                        min2[i] = r2;
                    }
                    if r2 < min2[j] {
                        min2[j] = r2;
                    }
                }
                for k in 0..D {
                    forces[i * D + k] += fi[k];
                }
                total += qi * row;
            }
            for (o, m) in nearest.iter_mut().zip(min2) {
                *o = m.sqrt();
            }
            Ok(2.0 * total)
        }
        LoopMode::Parallel => {
            let rows: Vec<f64> = forces
                .par_chunks_mut(D)
                .zip(nearest.par_iter_mut())
                .enumerate()
                .map(|(i, (f, near))| {
                    let xi = point::<D>(positions, i);
                    let qi = charges[i];
                    let mut row = 0.0;
                    let mut min2 = f64::INFINITY;
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let xj = point::<D>(positions, j);
                        let mut dx = [0.0; D];
                        let mut r2 = 0.0;
                        for k in 0..D {
                            dx[k] = xi[k] - xj[k];
                            r2 += dx[k] * dx[k];
                        }
                        if r2 < GUARD2 {
                            return Err(singular(i, j, r2));
                        }
                        let qj = charges[j];
                        let dwr = if E {
                            let (w, dwr) = kernel.eval_sq(r2);
                            row += qj * w;
                            dwr
                        } else {
                            kernel.dw_over_r_sq(r2)
                        };
                        let c = 2.0 * qi * qj * dwr;
                        for k in 0..D {
                            f[k] += c * dx[k];
                        }
                        min2 = min2.min(r2);
                    }
                    *near = min2.sqrt();
                    Ok(qi * row)
                })
                .collect::<Result<_>>()?;
            Ok(rows.iter().sum())
        }
    }
}

fn pair_forces_dyn(
    kernel: &PairKernel,
    d: usize,
    positions: &[f64],
    charges: &[f64],
    forces: &mut [f64],
    nearest: &mut [f64],
) -> Result<f64> {
    let n = charges.len();
    let mut total = 0.0;
    let mut min2 = vec![f64::INFINITY; n];
    let mut dx = vec![0.0; d];
    for i in 0..n {
        for j in i + 1..n {
            let mut r2 = 0.0;
            for k in 0..d {
                dx[k] = positions[i * d + k] - positions[j * d + k];
                r2 += dx[k] * dx[k];
            }
            if r2 < GUARD2 {
                return Err(singular(i, j, r2));
            }
            let (w, dwr) = kernel.eval_sq(r2);
            total += charges[i] * charges[j] * w;
            let c = 2.0 * charges[i] * charges[j] * dwr;
            for k in 0..d {
                forces[i * d + k] += c * dx[k];
                forces[j * d + k] -= c * dx[k];
            }
            min2[i] = min2[i].min(r2);
            min2[j] = min2[j].min(r2);
        }
    }
    for (o, m) in nearest.iter_mut().zip(min2) {
        *o = m.sqrt();
    }
    Ok(2.0 * total)
}

/// `H_N = N Σ q_i g(q_i) V(x_i) − Σ_{i≠j} q_i q_j W(|x_i − x_j|)`.
pub fn total_energy(config: &Configuration, spec: &GasSpec) -> Result<f64> {
    check_shape(config, spec)?;
    Evaluator::new(spec, config.charges())?.energy(config.positions())
}

/// Rows of `−∇H_N`, flattened `N × d`.
pub fn forces(config: &Configuration, spec: &GasSpec) -> Result<Vec<f64>> {
    check_shape(config, spec)?;
    let mut out = vec![0.0; config.positions().len()];
    Evaluator::new(spec, config.charges())?.energy_forces(config.positions(), &mut out, None)?;
    Ok(out)
}

/// Pair interaction `Σ_{i≠j} q_i q_j W_ij` alone.
pub fn pair_interaction(config: &Configuration, spec: &GasSpec) -> Result<f64> {
    check_shape(config, spec)?;
    let ev = Evaluator::new(spec, config.charges())?;
    Ok(ev.confinement_energy(config.positions()) - ev.energy(config.positions())?)
}

fn check_shape(config: &Configuration, spec: &GasSpec) -> Result<()> {
    if config.dimension() != spec.dimension {
        return Err(GasError::InvalidConfiguration(format!(
            "configuration in R^{} but gas in R^{}",
            config.dimension(),
            spec.dimension
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasmodel::{ChargeDistribution, ConfinementSpec, KernelSpec, WeightSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_spec(d: usize) -> GasSpec {
        GasSpec::new(d, WeightSpec::default(), ChargeDistribution::point(1.0).unwrap())
    }

    fn random_config(d: usize, n: usize, seed: u64) -> Configuration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3.0)).collect();
        Configuration::new(d, x, q).unwrap()
    }

    #[test]
    fn single_particle_at_origin() {
        let c = Configuration::new(2, vec![0.0, 0.0], vec![1.0]).unwrap();
        assert_eq!(total_energy(&c, &unit_spec(2)).unwrap(), 0.0);
        assert_eq!(forces(&c, &unit_spec(2)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_pair() {
        let c = Configuration::new(2, vec![0.5, 0.0, -0.5, 0.0], vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(total_energy(&c, &unit_spec(2)).unwrap(), 1.0, epsilon = 1e-15);
        let f = forces(&c, &unit_spec(2)).unwrap();
        assert_relative_eq!(f[0], -f[2], epsilon = 1e-15);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn coincident_particles_reported() {
        let c = Configuration::new(2, vec![0.1, 0.2, 0.1, 0.2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            total_energy(&c, &unit_spec(2)),
            Err(GasError::SingularConfiguration { i: 0, j: 1, .. })
        ));
    }

    #[test]
    fn forces_match_finite_differences() {
        let kernels = [
            KernelSpec::Coulomb,
            KernelSpec::Riesz { eta: 0.5 },
            KernelSpec::Riesz { eta: -0.7 },
            KernelSpec::Riesz { eta: 1.3 },
        ];
        for d in [2usize, 3, 4] {
            for kernel in kernels {
                for seed in 0..10 {
                    let spec = GasSpec::new(d, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 3.0).unwrap())
                        .with_kernel(kernel)
                        .with_confinement(ConfinementSpec::QuarticMinusQuadratic);
                    let c = random_config(d, 7, seed);
                    let f = forces(&c, &spec).unwrap();
                    let h = 1e-6;
                    for a in 0..c.positions().len() {
                        let mut p = c.clone();
                        p.positions_mut()[a] += h;
                        let ep = total_energy(&p, &spec).unwrap();
                        p.positions_mut()[a] -= 2.0 * h;
                        let em = total_energy(&p, &spec).unwrap();
                        let fd = -(ep - em) / (2.0 * h);
                        let scale = f[a].abs().max(1.0);
                        assert!((fd - f[a]).abs() < 1e-5 * scale, "d={d} {kernel:?} seed={seed} a={a}: {fd} vs {}", f[a]);
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_matches_serial() {
        for d in [2usize, 3] {
            let spec = unit_spec(d);
            let c = random_config(d, 60, 5);
            let serial = Evaluator::new(&spec, c.charges()).unwrap();
            let parallel = Evaluator::new(&spec, c.charges()).unwrap().with_mode(LoopMode::Parallel);
            let mut fs = vec![0.0; c.positions().len()];
            let mut fp = fs.clone();
            let mut ns = vec![0.0; c.len()];
            let mut np = ns.clone();
            let es = serial.energy_forces(c.positions(), &mut fs, Some(&mut ns)).unwrap();
            let ep = parallel.energy_forces(c.positions(), &mut fp, Some(&mut np)).unwrap();
            assert_relative_eq!(es, ep, max_relative = 1e-12);
            let mut fo = vec![0.0; c.positions().len()];
            serial.forces_into(c.positions(), &mut fo, None).unwrap();
            assert_eq!(fo, fs);
            assert_relative_eq!(parallel.energy(c.positions()).unwrap(), es, max_relative = 1e-12);
            for (a, b) in fs.iter().zip(&fp) {
                assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            }
            assert_eq!(ns, np);
        }
    }

    #[test]
    fn energy_consistent_between_paths() {
        let spec = unit_spec(2);
        let c = random_config(2, 30, 8);
        let ev = Evaluator::new(&spec, c.charges()).unwrap();
        let mut f = vec![0.0; 60];
        let e1 = ev.energy_forces(c.positions(), &mut f, None).unwrap();
        assert_relative_eq!(e1, ev.energy(c.positions()).unwrap(), max_relative = 1e-13);
    }

    #[test]
    fn rotation_invariance() {
        let spec = unit_spec(2);
        let c = random_config(2, 20, 2);
        let (s, co) = (0.3f64.sin(), 0.3f64.cos());
        let rotated: Vec<f64> = c
            .positions()
            .chunks(2)
            .flat_map(|p| [co * p[0] - s * p[1], s * p[0] + co * p[1]])
            .collect();
        let r = Configuration::new(2, rotated, c.charges().to_vec()).unwrap();
        assert_relative_eq!(total_energy(&c, &spec).unwrap(), total_energy(&r, &spec).unwrap(), max_relative = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn relabeling_invariance(seed in 0u64..500, n in 2usize..20) {
            let spec = unit_spec(2);
            let c = random_config(2, n, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let p = c.permuted(&perm);
            let a = total_energy(&c, &spec).unwrap();
            let b = total_energy(&p, &spec).unwrap();
            proptest::prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
        }
    }
}
