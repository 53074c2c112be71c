//! Empirical observables of simulated configurations.

use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};
use crate::gasmodel::{ball_volume, Configuration};

/// Ensemble radial histogram on bins equally spaced in `r^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialHistogram {
    pub dimension: usize,
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub charge_density: Vec<f64>,
    /// `NaN` for bins that are empty in every replica.
    pub mean_charge: Vec<f64>,
    /// Particle counts summed over replicas.
    pub counts: Vec<usize>,
    /// Standard errors across replicas; `NaN` with a single replica.
    pub density_se: Vec<f64>,
    pub charge_density_se: Vec<f64>,
    pub mean_charge_se: Vec<f64>,
    pub replicas: usize,
    pub empty_bins: Vec<usize>,
}

impl RadialHistogram {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    /// Bin centres in `r^d`, mapped back to `r`.
    pub fn centers(&self) -> Vec<f64> {
        let d = self.dimension as f64;
        self.edges
            .windows(2)
            .map(|w| (0.5 * (w[0].powf(d) + w[1].powf(d))).powf(1.0 / d))
            .collect()
    }

    pub fn bin_volume(&self, b: usize) -> f64 {
        let d = self.dimension as i32;
        ball_volume(self.dimension) * (self.edges[b + 1].powi(d) - self.edges[b].powi(d))
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.bins()).map(|b| self.density[b] * self.bin_volume(b)).sum()
    }

    pub fn total_charge(&self) -> f64 {
        (0..self.bins()).map(|b| self.charge_density[b] * self.bin_volume(b)).sum()
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

fn check_ensemble(configs: &[Configuration]) -> Result<usize> {
    let first = configs
        .first()
        .ok_or(GasError::InsufficientStatistics { found: 0, required: 1 })?;
    let d = first.dimension();
    if configs.iter().any(|c| c.dimension() != d || c.is_empty()) {
        return Err(GasError::InvalidConfiguration("ensemble mixes dimensions or holds an empty configuration".into()));
    }
    Ok(d)
}

/// Radial profiles with the outer edge at the largest observed radius.
pub fn radial_profiles(configs: &[Configuration], bins: usize) -> Result<RadialHistogram> {
    check_ensemble(configs)?;
    let outer = configs
        .iter()
        .flat_map(|c| c.radii())
        .fold(0.0, f64::max);
    radial_profiles_within(configs, bins, outer * (1.0 + 1e-12) + f64::MIN_POSITIVE)
}

/// Radial profiles on `[0, outer]`; particles beyond `outer` are not binned.
pub fn radial_profiles_within(configs: &[Configuration], bins: usize, outer: f64) -> Result<RadialHistogram> {
    let d = check_ensemble(configs)?;
    if bins == 0 || !(outer > 0.0) {
        return Err(GasError::InvalidConfiguration(format!("need bins > 0 and outer > 0, got {bins}, {outer}")));
    }
    let df = d as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|b| outer * (b as f64 / bins as f64).powf(1.0 / df))
        .collect();
    let volume = ball_volume(d) * outer.powi(d as i32) / bins as f64;
    let m = configs.len();
    let mut rho = vec![Vec::with_capacity(m); bins];
    let mut rho_q = vec![Vec::with_capacity(m); bins];
    let mut mean_q = vec![Vec::with_capacity(m); bins];
    let mut counts = vec![0usize; bins];
    for c in configs {
        let n = c.len() as f64;
        let mut count = vec![0usize; bins];
        let mut charge = vec![0.0; bins];
        for (r, &q) in c.radii().iter().zip(c.charges()) {
            if *r > outer {
                continue;
            }
            let b = (((r / outer).powf(df) * bins as f64) as usize).min(bins - 1);
            count[b] += 1;
            charge[b] += q;
        }
        for b in 0..bins {
            counts[b] += count[b];
            rho[b].push(count[b] as f64 / (n * volume));
            rho_q[b].push(charge[b] / (n * volume));
            if count[b] > 0 {
                mean_q[b].push(charge[b] / count[b] as f64);
            }
        }
    }
    let split = |v: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) { v.iter().map(|x| mean_and_se(x)).unzip() };
    let (density, density_se) = split(&rho);
    let (charge_density, charge_density_se) = split(&rho_q);
    let (mean_charge, mean_charge_se) = split(&mean_q);
    let empty_bins = (0..bins).filter(|&b| counts[b] == 0).collect();
    Ok(RadialHistogram {
        dimension: d,
        edges,
        density,
        charge_density,
        mean_charge,
        counts,
        density_se,
        charge_density_se,
        mean_charge_se,
        replicas: m,
        empty_bins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighbors {
    /// Per-particle distance, multiplied by `scale`.
    pub distances: Vec<f64>,
    /// `N^{1/d}` when blown up, otherwise 1.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Normalized so that it integrates to 1 over `edges`.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(GasError::InvalidConfiguration(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            if v >= lo && v <= hi {
                counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
            }
        }
        let total = values.len().max(1) as f64;
        let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
        Ok(Histogram { edges, counts, density })
    }

    /// Indices of bins that exceed both neighbours (plateaus count once).
    pub fn local_maxima(&self) -> Vec<usize> {
        let c = &self.counts;
        let n = c.len();
        let mut peaks = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && c[j + 1] == c[i] {
                j += 1;
            }
            let left = i == 0 || c[i - 1] < c[i];
            let right = j + 1 == n || c[j + 1] < c[i];
            if left && right && c[i] > 0 {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        }
        peaks
    }
}

/// Distance from each particle to its nearest neighbour, optionally blown up by `N^{1/d}`.
pub fn nearest_neighbor_distances(config: &Configuration, blow_up: bool) -> Result<NearestNeighbors> {
    let n = config.len();
    if n < 2 {
        return Err(GasError::InsufficientStatistics { found: n, required: 2 });
    }
    let d = config.dimension();
    let x = config.positions();
    let mut best = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let r2: f64 = (0..d).map(|k| (x[i * d + k] - x[j * d + k]).powi(2)).sum();
            best[i] = best[i].min(r2);
            best[j] = best[j].min(r2);
        }
    }
    let scale = if blow_up { (n as f64).powf(1.0 / d as f64) } else { 1.0 };
    Ok(NearestNeighbors {
        distances: best.into_iter().map(|r2| scale * r2.sqrt()).collect(),
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub r0: f64,
    pub width: f64,
    /// Bin edges of the blown-up distance `N^{1/d} |x_j − x_i|`.
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error across replicas; `NaN` with a single replica.
    pub standard_errors: Vec<f64>,
    /// Local blown-up density used to normalize.
    pub normalization: f64,
    pub references: usize,
    pub replicas: usize,
}

impl CorrelationCurve {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Location of the global maximum, refined by a parabola through the
    /// neighbouring bins.
    pub fn first_peak(&self) -> Option<f64> {
        let (k, _) = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        let c = self.centers();
        if k == 0 || k + 1 == self.values.len() {
            return Some(c[k]);
        }
        let (a, b, e) = (self.values[k - 1], self.values[k], self.values[k + 1]);
        let denom = a - 2.0 * b + e;
        let h = c[k + 1] - c[k];
        let shift = if denom < 0.0 { 0.5 * (a - e) / denom } else { 0.0 };
        Some(c[k] + shift.clamp(-0.5, 0.5) * h)
    }
}

/// Minimum number of reference particles for a correlation estimate.
pub const MIN_REFERENCES: usize = 10;

/// `G(r₀, r)`: density of blown-up distances from particles in the annulus
/// `||x| − r₀| < width/2`, divided by the local blown-up density of the
/// annulus so that an uncorrelated gas gives 1.
pub fn local_pair_correlation(configs: &[Configuration], r0: f64, width: f64, edges: &[f64]) -> Result<CorrelationCurve> {
    let d = check_ensemble(configs)?;
    if !(width > 0.0) || edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || edges[0] < 0.0 {
        return Err(GasError::InvalidConfiguration("correlation grid must be increasing and non-negative".into()));
    }
    let (lo, hi) = ((r0 - 0.5 * width).max(0.0), r0 + 0.5 * width);
    let annulus = ball_volume(d) * (hi.powi(d as i32) - lo.powi(d as i32));
    let bins = edges.len() - 1;
    let shell: Vec<f64> = edges
        .windows(2)
        .map(|w| ball_volume(d) * (w[1].powi(d as i32) - w[0].powi(d as i32)))
        .collect();
    let t_max = edges[bins];
    let mut per_replica: Vec<(Vec<f64>, usize)> = Vec::with_capacity(configs.len());
    let mut densities = Vec::with_capacity(configs.len());
    let mut total_refs = 0;
    for c in configs {
        let n = c.len();
        let scale = (n as f64).powf(1.0 / d as f64);
        let radii = c.radii();
        let refs: Vec<usize> = (0..n).filter(|&i| radii[i] >= lo && radii[i] < hi).collect();
        // particles per blown-up volume: (count / annulus) / N
        densities.push(refs.len() as f64 / (annulus * n as f64));
        let mut counts = vec![0.0; bins];
        let x = c.positions();
        for &i in &refs {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r2: f64 = (0..d).map(|k| (x[i * d + k] - x[j * d + k]).powi(2)).sum();
                let t = scale * r2.sqrt();
                if t < edges[0] || t >= t_max {
                    continue;
                }
                let b = edges.partition_point(|&e| e <= t) - 1;
                counts[b] += 1.0;
            }
        }
        total_refs += refs.len();
        per_replica.push((counts, refs.len()));
    }
    if total_refs < MIN_REFERENCES {
        return Err(GasError::InsufficientStatistics { found: total_refs, required: MIN_REFERENCES });
    }
    let normalization = densities.iter().sum::<f64>() / densities.len() as f64;
    let mut values = vec![0.0; bins];
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (counts, refs) in &per_replica {
        for b in 0..bins {
            values[b] += counts[b];
            if *refs > 0 {
                samples[b].push(counts[b] / (*refs as f64 * shell[b] * normalization));
            }
        }
    }
    for b in 0..bins {
        values[b] /= total_refs as f64 * shell[b] * normalization;
    }
    let standard_errors = samples.iter().map(|s| mean_and_se(s).1).collect();
    Ok(CorrelationCurve {
        r0,
        width,
        edges: edges.to_vec(),
        values,
        standard_errors,
        normalization,
        references: total_refs,
        replicas: configs.len(),
    })
}

/// Midranks (1-based), averaging tied values.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with midranked ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GasError::InvalidConfiguration("spearman inputs differ in length".into()));
    }
    if x.len() < 10 {
        return Err(GasError::InsufficientStatistics { found: x.len(), required: 10 });
    }
    let (rx, ry) = (midranks(x), midranks(y));
    let n = x.len() as f64;
    let mean = 0.5 * (n + 1.0);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(GasError::UndefinedMetric("rank correlation of a constant sequence".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman correlation between charge and distance from the origin.
pub fn ordering_metric(config: &Configuration) -> Result<f64> {
    ordering_metric_by(config, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Spearman correlation between charge and `coordinate(x_i)`.
pub fn ordering_metric_by(config: &Configuration, coordinate: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let q = config.charges();
    if config.len() >= 10 && q.iter().all(|&v| v == q[0]) {
        return Err(GasError::UndefinedMetric("all charges are equal".into()));
    }
    let c: Vec<f64> = (0..config.len()).map(|i| coordinate(config.position(i))).collect();
    spearman(q, &c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn uniform_disk(n: usize, seed: u64) -> Configuration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let r = rng.random::<f64>().sqrt();
            let t = 2.0 * PI * rng.random::<f64>();
            x.extend([r * t.cos(), r * t.sin()]);
        }
        let q = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        Configuration::new(2, x, q).unwrap()
    }

    #[test]
    fn uniform_disk_density_within_three_se() {
        let configs: Vec<_> = (0..20).map(|s| uniform_disk(1000, s)).collect();
        let h = radial_profiles_within(&configs, 16, 1.0).unwrap();
        let mut outliers = 0;
        for b in 0..16 {
            if (h.density[b] - 1.0 / PI).abs() > 3.0 * h.density_se[b] {
                outliers += 1;
            }
        }
        // 3 SE is a 99.7% band; allow one stray bin among sixteen
        assert!(outliers <= 1, "{h:?}");
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        let qbar: f64 = configs.iter().map(|c| c.charges().iter().sum::<f64>() / 1000.0).sum::<f64>() / 20.0;
        assert!((h.total_charge() - qbar).abs() < 1e-12);
    }

    #[test]
    fn ring_fills_a_single_bin() {
        let n = 40;
        let x: Vec<f64> = (0..n)
            .flat_map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [0.5 * t.cos(), 0.5 * t.sin()]
            })
            .collect();
        let c = Configuration::new(2, x, vec![1.0; n]).unwrap();
        let h = radial_profiles_within(&[c], 10, 1.0).unwrap();
        assert_eq!(h.counts.iter().filter(|&&k| k > 0).count(), 1);
        assert_eq!(h.empty_bins.len(), 9);
    }

    #[test]
    fn square_lattice_neighbors() {
        let x: Vec<f64> = (0..100).flat_map(|k| [(k % 10) as f64, (k / 10) as f64]).collect();
        let c = Configuration::new(2, x, vec![1.0; 100]).unwrap();
        let nn = nearest_neighbor_distances(&c, false).unwrap();
        assert!(nn.distances.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let blown = nearest_neighbor_distances(&c, true).unwrap();
        assert!(blown.distances.iter().all(|&v| (v - 10.0).abs() < 1e-12));
    }

    #[test]
    fn poisson_correlation_is_flat() {
        let configs: Vec<_> = (0..30).map(|s| uniform_disk(1000, 100 + s)).collect();
        let edges: Vec<f64> = (0..=20).map(|k| 0.25 * k as f64).collect();
        let g = local_pair_correlation(&configs, 0.5, 0.1, &edges).unwrap();
        let mut outliers = 0;
        for b in 1..20 {
            if (g.values[b] - 1.0).abs() > 3.0 * g.standard_errors[b] {
                outliers += 1;
            }
        }
        assert!(outliers <= 1, "{g:?}");
    }

    #[test]
    fn too_few_references() {
        let c = uniform_disk(50, 3);
        let err = local_pair_correlation(&[c], 0.5, 0.01, &[0.0, 1.0, 2.0]).unwrap_err();
        assert!(matches!(err, GasError::InsufficientStatistics { .. }));
    }

    #[test]
    fn ordering_extremes() {
        let n = 50;
        let x: Vec<f64> = (0..n).flat_map(|k| [k as f64 + 1.0, 0.0]).collect();
        let q: Vec<f64> = (0..n).map(|k| (n - k) as f64).collect();
        let c = Configuration::new(2, x, q).unwrap();
        assert!((ordering_metric(&c).unwrap() + 1.0).abs() < 1e-12);
        let flat = Configuration::new(2, c.positions().to_vec(), vec![2.0; n]).unwrap();
        assert!(matches!(ordering_metric(&flat), Err(GasError::UndefinedMetric(_))));
        let short = Configuration::new(2, vec![1.0, 0.0, 2.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(matches!(ordering_metric(&short), Err(GasError::InsufficientStatistics { .. })));
    }

    #[test]
    fn independent_charges_give_small_metric() {
        for seed in 0..20 {
            let c = uniform_disk(1000, 500 + seed);
            assert!(ordering_metric(&c).unwrap().abs() < 0.1);
        }
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn ordering_invariant_under_rotation_and_relabeling(seed in 0u64..1000, angle in 0.0f64..6.28) {
            let c = uniform_disk(60, seed);
            let base = ordering_metric(&c).unwrap();
            let (s, co) = angle.sin_cos();
            let rotated: Vec<f64> = c.positions().chunks(2).flat_map(|p| [co * p[0] - s * p[1], s * p[0] + co * p[1]]).collect();
            let rc = Configuration::new(2, rotated, c.charges().to_vec()).unwrap();
            prop_assert!((ordering_metric(&rc).unwrap() - base).abs() < 1e-12);
            let perm: Vec<usize> = (0..60).map(|k| (k * 7 + seed as usize) % 60).collect();
            prop_assert!((ordering_metric(&c.permuted(&perm)).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn histogram_conserves_mass(seed in 0u64..1000, bins in 1usize..40) {
            let c = uniform_disk(200, seed);
            let h = radial_profiles(&[c.clone()], bins).unwrap();
            prop_assert!((h.total_mass() - 1.0).abs() < 1e-12);
            let qbar = c.charges().iter().sum::<f64>() / 200.0;
            prop_assert!((h.total_charge() - qbar).abs() < 1e-12);
        }
    }
}
