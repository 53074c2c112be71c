use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};
use crate::quadrature::adaptive_simpson;

const MASS_TOLERANCE: f64 = 1e-10;

/// How a finite sample of charges is drawn from the law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChargeSampling {
    /// Independent draws.
    #[default]
    Iid,
    /// Deterministic quantiles (continuous laws) or largest-remainder counts
    /// (atomic laws), randomly assigned to particle labels.
    Stratified,
}

/// Serialized form of a charge law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ChargeForm {
    /// Point masses `(q_i, ν_i)`.
    Atomic { atoms: Vec<(f64, f64)> },
    /// Uniform density on `[min, max]`.
    Uniform { min: f64, max: f64 },
    /// Piecewise-linear density through the given knots.
    Tabulated { q: Vec<f64>, density: Vec<f64> },
}

/// Probability law `ν` of the charges on `Q = [q_min, q_max]`, `q_min > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChargeForm", into = "ChargeForm")]
pub struct ChargeDistribution {
    form: ChargeForm,
    mean: f64,
    second_moment: f64,
    /// Tabulated laws: cumulative mass and first moment at the knots.
    cum_mass: Vec<f64>,
    cum_first: Vec<f64>,
}

impl From<ChargeDistribution> for ChargeForm {
    fn from(law: ChargeDistribution) -> Self {
        law.form
    }
}

impl TryFrom<ChargeForm> for ChargeDistribution {
    type Error = GasError;

    fn try_from(form: ChargeForm) -> Result<Self> {
        match form {
            ChargeForm::Atomic { atoms } => ChargeDistribution::atomic(atoms),
            ChargeForm::Uniform { min, max } => ChargeDistribution::uniform(min, max),
            ChargeForm::Tabulated { q, density } => ChargeDistribution::tabulated(q, density),
        }
    }
}

impl ChargeDistribution {
    pub fn point(q: f64) -> Result<Self> {
        Self::atomic(vec![(q, 1.0)])
    }

    pub fn atomic(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(GasError::InvalidCharges("no atoms".into()));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in atoms.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(GasError::InvalidCharges(format!("duplicate atom at q = {}", w[0].0)));
            }
        }
        for &(q, nu) in &atoms {
            if !(q > 0.0) || !q.is_finite() {
                return Err(GasError::InvalidCharges(format!("charge {q} must be positive")));
            }
            if !(nu >= 0.0) {
                return Err(GasError::InvalidCharges(format!("negative weight {nu}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(GasError::InvalidCharges(format!("atom weights sum to {total}")));
        }
        let mean = atoms.iter().map(|&(q, nu)| q * nu).sum();
        let second_moment = atoms.iter().map(|&(q, nu)| q * q * nu).sum();
        Ok(ChargeDistribution {
            form: ChargeForm::Atomic { atoms },
            mean,
            second_moment,
            cum_mass: Vec::new(),
            cum_first: Vec::new(),
        })
    }

    /// Equal weights on the given charges.
    pub fn equal_atoms(charges: &[f64]) -> Result<Self> {
        let w = 1.0 / charges.len() as f64;
        Self::atomic(charges.iter().map(|&q| (q, w)).collect())
    }

    pub fn uniform(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0) || !(max > min) || !max.is_finite() {
            return Err(GasError::InvalidCharges(format!(
                "uniform law needs 0 < min < max, got [{min}, {max}]"
            )));
        }
        Ok(ChargeDistribution {
            form: ChargeForm::Uniform { min, max },
            mean: 0.5 * (min + max),
            second_moment: (min * min + min * max + max * max) / 3.0,
            cum_mass: Vec::new(),
            cum_first: Vec::new(),
        })
    }

    /// Piecewise-linear density; the knots must carry total mass 1 within
    /// `1e-10`.
    pub fn tabulated(q: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let (law, mass) = Self::tabulated_unchecked(q, density)?;
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(GasError::InvalidCharges(format!("tabulated density has mass {mass}")));
        }
        Ok(law)
    }

    /// Rescales a tabulated density to unit mass; returns the law and the
    /// mass before rescaling.
    pub fn tabulated_normalized(q: Vec<f64>, mut density: Vec<f64>) -> Result<(Self, f64)> {
        let (_, mass) = Self::tabulated_unchecked(q.clone(), density.clone())?;
        if !(mass > 0.0) {
            return Err(GasError::InvalidCharges("tabulated density has zero mass".into()));
        }
        density.iter_mut().for_each(|v| *v /= mass);
        let (law, _) = Self::tabulated_unchecked(q, density)?;
        Ok((law, mass))
    }

    fn tabulated_unchecked(q: Vec<f64>, density: Vec<f64>) -> Result<(Self, f64)> {
        if q.len() < 2 || q.len() != density.len() {
            return Err(GasError::InvalidCharges(
                "tabulated law needs at least two knots and matching lengths".into(),
            ));
        }
        if !(q[0] > 0.0) {
            return Err(GasError::InvalidCharges(format!("q_min = {} must be positive", q[0])));
        }
        if q.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GasError::InvalidCharges("knots must be strictly increasing".into()));
        }
        if density.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(GasError::InvalidCharges("density must be finite and non-negative".into()));
        }
        let mut cum_mass = vec![0.0; q.len()];
        let mut cum_first = vec![0.0; q.len()];
        let mut cum_second = 0.0;
        for k in 1..q.len() {
            let (a, b) = (q[k - 1], q[k]);
            let (fa, fb) = (density[k - 1], density[k]);
            let h = b - a;
            cum_mass[k] = cum_mass[k - 1] + 0.5 * h * (fa + fb);
            cum_first[k] = cum_first[k - 1] + segment_moment(a, b, fa, fb, 1);
            cum_second += segment_moment(a, b, fa, fb, 2);
        }
        let mass = *cum_mass.last().unwrap();
        let mean = *cum_first.last().unwrap() / mass.max(f64::MIN_POSITIVE);
        let second_moment = cum_second / mass.max(f64::MIN_POSITIVE);
        Ok((
            ChargeDistribution {
                form: ChargeForm::Tabulated { q, density },
                mean,
                second_moment,
                cum_mass,
                cum_first,
            },
            mass,
        ))
    }

    pub fn form(&self) -> &ChargeForm {
        &self.form
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.form, ChargeForm::Atomic { .. })
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match &self.form {
            ChargeForm::Atomic { atoms } => Some(atoms),
            _ => None,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match &self.form {
            ChargeForm::Atomic { atoms } => (atoms[0].0, atoms[atoms.len() - 1].0),
            ChargeForm::Uniform { min, max } => (*min, *max),
            ChargeForm::Tabulated { q, .. } => (q[0], q[q.len() - 1]),
        }
    }

    /// `⟨q⟩`
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `⟨q²⟩`
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Density `ν(q)` of a continuous law; `None` for atomic laws.
    pub fn density(&self, q: f64) -> Option<f64> {
        match &self.form {
            ChargeForm::Atomic { .. } => None,
            ChargeForm::Uniform { min, max } => {
                Some(if q >= *min && q <= *max { 1.0 / (max - min) } else { 0.0 })
            }
            ChargeForm::Tabulated { q: knots, density } => {
                if q < knots[0] || q > knots[knots.len() - 1] {
                    return Some(0.0);
                }
                let k = segment_index(knots, q);
                let t = (q - knots[k]) / (knots[k + 1] - knots[k]);
                Some(density[k] + t * (density[k + 1] - density[k]))
            }
        }
    }

    /// `ν([q_min, q])`
    pub fn cdf(&self, q: f64) -> f64 {
        match &self.form {
            ChargeForm::Atomic { atoms } => atoms.iter().filter(|a| a.0 <= q).map(|a| a.1).sum(),
            ChargeForm::Uniform { min, max } => ((q - min) / (max - min)).clamp(0.0, 1.0),
            ChargeForm::Tabulated { q: knots, density } => {
                if q <= knots[0] {
                    return 0.0;
                }
                if q >= knots[knots.len() - 1] {
                    return 1.0;
                }
                let k = segment_index(knots, q);
                let (a, fa, fb, h) = (knots[k], density[k], density[k + 1], knots[k + 1] - knots[k]);
                let s = q - a;
                self.cum_mass[k] + fa * s + (fb - fa) * s * s / (2.0 * h)
            }
        }
    }

    /// Inverse of the CDF on `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match &self.form {
            ChargeForm::Atomic { atoms } => {
                let mut acc = 0.0;
                for &(q, nu) in atoms {
                    acc += nu;
                    if u <= acc {
                        return q;
                    }
                }
                atoms[atoms.len() - 1].0
            }
            ChargeForm::Uniform { min, max } => min + u * (max - min),
            ChargeForm::Tabulated { q: knots, density } => {
                let k = match self.cum_mass.partition_point(|&m| m < u) {
                    0 => 0,
                    p => (p - 1).min(knots.len() - 2),
                };
                let (a, fa, fb, h) = (knots[k], density[k], density[k + 1], knots[k + 1] - knots[k]);
                let target = u - self.cum_mass[k];
                // fa s + (fb - fa) s² / (2h) = target
                let slope = (fb - fa) / h;
                let s = if slope.abs() < 1e-14 * (fa.abs() + 1.0) {
                    if fa > 0.0 {
                        target / fa
                    } else {
                        0.0
                    }
                } else {
                    let disc = (fa * fa + 2.0 * slope * target).max(0.0);
                    2.0 * target / (fa + disc.sqrt()).max(f64::MIN_POSITIVE)
                };
                (a + s.clamp(0.0, h)).min(knots[k + 1])
            }
        }
    }

    /// `∫_a^b u ν(u) du` over the law's support.
    pub fn partial_first_moment(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match &self.form {
            ChargeForm::Atomic { atoms } => atoms
                .iter()
                .filter(|x| x.0 >= a && x.0 <= b)
                .map(|x| x.0 * x.1)
                .sum(),
            ChargeForm::Uniform { min, max } => {
                let lo = a.max(*min);
                let hi = b.min(*max);
                if hi <= lo {
                    0.0
                } else {
                    0.5 * (hi * hi - lo * lo) / (max - min)
                }
            }
            ChargeForm::Tabulated { .. } => self.cumulative_first(b) - self.cumulative_first(a),
        }
    }

    fn cumulative_first(&self, q: f64) -> f64 {
        let ChargeForm::Tabulated { q: knots, density } = &self.form else {
            unreachable!()
        };
        if q <= knots[0] {
            return 0.0;
        }
        if q >= knots[knots.len() - 1] {
            return *self.cum_first.last().unwrap();
        }
        let k = segment_index(knots, q);
        let (a, b) = (knots[k], knots[k + 1]);
        let t = (q - a) / (b - a);
        let fq = density[k] + t * (density[k + 1] - density[k]);
        self.cum_first[k] + segment_moment(a, q, density[k], fq, 1)
    }

    /// `∫ φ dν`, exact for atomic laws and adaptive quadrature otherwise.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> Result<f64> {
        match &self.form {
            ChargeForm::Atomic { atoms } => Ok(atoms.iter().map(|&(q, nu)| nu * phi(q)).sum()),
            ChargeForm::Uniform { min, max } => {
                let w = 1.0 / (max - min);
                Ok(adaptive_simpson(|q| w * phi(q), *min, *max, 1e-12)?.value)
            }
            ChargeForm::Tabulated { q: knots, .. } => {
                let mut total = 0.0;
                for k in 0..knots.len() - 1 {
                    let f = |q: f64| self.density(q).unwrap() * phi(q);
                    total += adaptive_simpson(f, knots[k], knots[k + 1], 1e-13)?.value;
                }
                Ok(total)
            }
        }
    }

    /// Draws `n` charges; reproducible for a given RNG state.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, sampling: ChargeSampling, rng: &mut R) -> Vec<f64> {
        match sampling {
            ChargeSampling::Iid => (0..n).map(|_| self.quantile(rng.random::<f64>())).collect(),
            ChargeSampling::Stratified => {
                let mut charges = match &self.form {
                    ChargeForm::Atomic { atoms } => {
                        let weights: Vec<f64> = atoms.iter().map(|a| a.1).collect();
                        let counts = largest_remainder(&weights, n);
                        atoms
                            .iter()
                            .zip(counts)
                            .flat_map(|(&(q, _), c)| std::iter::repeat_n(q, c))
                            .collect::<Vec<_>>()
                    }
                    _ => (0..n)
                        .map(|i| self.quantile((i as f64 + 0.5) / n as f64))
                        .collect(),
                };
                charges.shuffle(rng);
                charges
            }
        }
    }
}

fn segment_index(knots: &[f64], q: f64) -> usize {
    knots.partition_point(|&k| k <= q).saturating_sub(1).min(knots.len() - 2)
}

/// `∫_a^b u^p ℓ(u) du` for the linear interpolant `ℓ` with `ℓ(a)=fa`, `ℓ(b)=fb`.
fn segment_moment(a: f64, b: f64, fa: f64, fb: f64, p: i32) -> f64 {
    let h = b - a;
    if h <= 0.0 {
        return 0.0;
    }
    // ℓ(u) = α + β u
    let beta = (fb - fa) / h;
    let alpha = fa - beta * a;
    let pf = p as f64;
    let prim = |u: f64| alpha * u.powi(p + 1) / (pf + 1.0) + beta * u.powi(p + 2) / (pf + 2.0);
    prim(b) - prim(a)
}

/// Integer counts proportional to `weights` summing to `n`.
fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = raw[i] - raw[i].floor();
        let fj = raw[j] - raw[j].floor();
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
