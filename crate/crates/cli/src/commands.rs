use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hetgas::energy::{splitting_terms, SplitBreakdown};
use hetgas::equilibrium::{predict, Prediction};
use hetgas::gasmodel::{Configuration, GasSpec};
use hetgas::inverse::{design, pushforward_error, verify_roundtrip, ManifoldCurve, Reconstruction, RoundtripOptions, TargetDensity};
use hetgas::io::{
    configuration_from_table, configuration_table, correlation_table, histogram_table, profile_table, save_checkpoint,
    shell_table, trace_table, Table,
};
use hetgas::minimizer::{minimize, MinimizeOptions, MinimizeResult};
use hetgas::stats::{
    local_pair_correlation, nearest_neighbor_distances, ordering_metric, ordering_metric_by, radial_profiles_within,
    Histogram,
};
use hetgas::GasError;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Format, Observable, OrderingCoordinate, ScenarioConfig, TargetChoice};

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_table(path: &Path, table: &Table) -> Result<()> {
    table.write(path).with_context(|| format!("writing {}", path.display()))
}

/// Stamps every table with the scenario name and seed.
fn stamped(table: Table, config: &ScenarioConfig) -> Table {
    let mut t = table;
    let mut meta = vec![("scenario".to_string(), config.name.clone()), ("seed".to_string(), config.run.seed.to_string())];
    meta.append(&mut t.metadata);
    t.metadata = meta;
    t
}

pub fn resolve_target(choice: &TargetChoice) -> Result<TargetDensity> {
    Ok(match choice {
        TargetChoice::Fig7 => TargetDensity::fig7(),
        TargetChoice::Parabolic => TargetDensity::parabolic(),
        TargetChoice::Power { dimension, exponent } => TargetDensity::power(*dimension, *exponent)?,
        TargetChoice::Csv { path, dimension } => {
            TargetDensity::from_csv(path, *dimension)
                .with_context(|| format!("reading target {}", path.display()))?
                .0
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InverseSummary {
    pub q_min: f64,
    pub q_max: f64,
    pub saddle_charge: f64,
    pub terminal_charge: f64,
    pub terminal_xi: f64,
    pub raw_mass: f64,
    pub curve_mass: f64,
    pub lambda_q: f64,
    pub lambda_xi: f64,
    pub departure: [f64; 2],
    pub xi_epsilon: f64,
    pub pushforward_sup_error: f64,
}

pub struct InverseOutcome {
    pub curve: ManifoldCurve,
    pub reconstruction: Reconstruction,
    pub spec: GasSpec,
    pub summary: InverseSummary,
    pub target: TargetDensity,
}

/// Reconstructs the charge law and writes `nu.csv`, `curve.csv` and `inverse.json`.
pub fn run_inverse(config: &ScenarioConfig, out: &Path) -> Result<InverseOutcome> {
    let inv = config
        .inverse
        .as_ref()
        .ok_or_else(|| crate::exit::ConfigError("the inverse subcommand needs an [inverse] block".into()))?;
    let target = resolve_target(&inv.target)?;
    let weight = inv.weight.clone().unwrap_or_else(|| config.gas.weight.clone());
    let (curve, reconstruction, spec) = design(&target, &weight, &inv.control)?;
    let pushforward = pushforward_error(&spec, &target, 0.95)?;
    let (q_min, q_max) = reconstruction.law.support();
    let summary = InverseSummary {
        q_min,
        q_max,
        saddle_charge: curve.saddle.charge,
        terminal_charge: curve.terminal_charge,
        terminal_xi: curve.terminal_xi,
        raw_mass: reconstruction.raw_mass,
        curve_mass: curve.mass,
        lambda_q: curve.saddle.lambda_q,
        lambda_xi: curve.saddle.lambda_xi,
        departure: curve.departure,
        xi_epsilon: curve.xi_epsilon,
        pushforward_sup_error: pushforward,
    };
    ensure_dir(out)?;
    let mut nu = Table::new(&["q", "nu"]);
    let mut by_q: Vec<_> = curve.points.iter().map(|p| (p.q, p.nu / reconstruction.raw_mass)).collect();
    by_q.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (q, v) in by_q {
        nu.push(vec![q, v]);
    }
    write_table(&out.join("nu.csv"), &stamped(nu.meta("q_min", q_min).meta("q_max", q_max), config))?;
    let mut table = Table::new(&["q", "xi", "mass", "nu"]);
    for p in &curve.points {
        table.push(vec![p.q, p.xi, p.mass, p.nu]);
    }
    write_table(&out.join("curve.csv"), &stamped(table, config))?;
    write_json(&out.join("inverse.json"), &summary)?;
    Ok(InverseOutcome { curve, reconstruction, spec, summary, target })
}

/// `GasSpec` after applying an inverse block, if any.
pub fn effective_spec(config: &ScenarioConfig, out: &Path) -> Result<(GasSpec, Option<InverseOutcome>)> {
    if config.inverse.is_some() {
        let outcome = run_inverse(config, out)?;
        Ok((outcome.spec.clone(), Some(outcome)))
    } else {
        Ok((config.gas.clone(), None))
    }
}

pub fn run_replicas(spec: &GasSpec, config: &ScenarioConfig) -> Result<Vec<MinimizeResult>> {
    let run = &config.run;
    let results = (0..run.replicas)
        .into_par_iter()
        .map(|k| {
            let options = MinimizeOptions {
                schedule: run.schedule.clone(),
                seed: run.seed.wrapping_add(k as u64),
                charge_sampling: run.sampling,
                trace_every: run.trace_every,
                ..Default::default()
            };
            minimize(spec, run.n, &options)
        })
        .collect::<hetgas::Result<Vec<_>>>()?;
    Ok(results)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicaSummary {
    pub replica: usize,
    pub seed: u64,
    pub energy: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Writes checkpoints, traces and `simulate.json`.
pub fn write_simulation(config: &ScenarioConfig, results: &[MinimizeResult], out: &Path) -> Result<Vec<ReplicaSummary>> {
    let checkpoints = out.join("checkpoints");
    let traces = out.join("traces");
    ensure_dir(&checkpoints)?;
    ensure_dir(&traces)?;
    let mut summary = Vec::with_capacity(results.len());
    for (k, r) in results.iter().enumerate() {
        let seed = config.run.seed.wrapping_add(k as u64);
        let tag = format!("replica_{k:04}");
        if config.output.formats.contains(&Format::Csv) {
            let t = configuration_table(&r.config).meta("energy", r.energy).meta("residual", r.residual);
            write_table(&checkpoints.join(format!("{tag}.csv")), &stamped(t, config).meta("replica_seed", seed))?;
        }
        if config.output.formats.contains(&Format::Binary) {
            save_checkpoint(&r.config, checkpoints.join(format!("{tag}.bin")))?;
        }
        write_table(&traces.join(format!("{tag}.csv")), &stamped(trace_table(&r.trace), config))?;
        summary.push(ReplicaSummary {
            replica: k,
            seed,
            energy: r.energy,
            residual: r.residual,
            converged: r.converged,
        });
    }
    write_json(&out.join("simulate.json"), &summary)?;
    Ok(summary)
}

fn convergence_check(summary: &[ReplicaSummary], threshold: f64) -> Result<()> {
    let failed: Vec<_> = summary.iter().filter(|s| !s.converged).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let worst = failed.iter().map(|s| s.residual).fold(0.0, f64::max);
    Err(GasError::Convergence(format!(
        "{} of {} replicas above residual threshold {threshold:e} (worst {worst:e})",
        failed.len(),
        summary.len()
    ))
    .into())
}

/// `simulate`: minimizes `run.replicas` gases.
pub fn simulate(config: &ScenarioConfig, out: &Path) -> Result<Vec<MinimizeResult>> {
    ensure_dir(out)?;
    let (spec, _) = effective_spec(config, out)?;
    let results = run_replicas(&spec, config)?;
    let summary = write_simulation(config, &results, out)?;
    convergence_check(&summary, config.run.schedule.residual_threshold)?;
    Ok(results)
}

/// Loads every `replica_*.csv` checkpoint under `dir/checkpoints`.
pub fn load_checkpoints(dir: &Path) -> Result<Vec<Configuration>> {
    let path = dir.join("checkpoints");
    let mut files: Vec<PathBuf> = match fs::read_dir(&path) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    if files.is_empty() {
        return Err(GasError::InsufficientStatistics { found: 0, required: 1 }).with_context(|| format!("no checkpoints in {}", path.display()));
    }
    files
        .iter()
        .map(|f| {
            let t = Table::read(f).with_context(|| format!("reading {}", f.display()))?;
            Ok(configuration_from_table(&t)?)
        })
        .collect()
}

fn support_radius(spec: &GasSpec, configs: &[Configuration]) -> f64 {
    if let Ok(p) = predict(spec) {
        if let Some(profile) = p.profile() {
            return profile.support_radius();
        }
    }
    configs.iter().flat_map(|c| c.radii()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsSummary {
    pub replicas: usize,
    pub support_radius: f64,
    pub ordering: Vec<f64>,
    pub ordering_mean: Option<f64>,
    pub correlation_peaks: Vec<(f64, Option<f64>)>,
}

/// `stats`: observable CSVs for an ensemble.
pub fn stats(config: &ScenarioConfig, spec: &GasSpec, configs: &[Configuration], out: &Path) -> Result<StatsSummary> {
    ensure_dir(out)?;
    let a = &config.analysis;
    let radius = support_radius(spec, configs);
    let planar_radial = spec.manifold.is_none();
    let mut summary = StatsSummary {
        replicas: configs.len(),
        support_radius: radius,
        ordering: Vec::new(),
        ordering_mean: None,
        correlation_peaks: Vec::new(),
    };
    for obs in &a.observables {
        match obs {
            Observable::Radial if planar_radial => {
                let outer = configs.iter().flat_map(|c| c.radii()).fold(radius, f64::max) * (1.0 + 1e-9);
                let h = radial_profiles_within(configs, a.bins, outer)?;
                write_table(&out.join("radial.csv"), &stamped(histogram_table(&h).meta("support_radius", radius), config))?;
            }
            Observable::NearestNeighbor => {
                let mut rows = Table::new(&["replica", "q", "distance"]);
                let mut all = Vec::new();
                for (k, c) in configs.iter().enumerate() {
                    let nn = nearest_neighbor_distances(c, true)?;
                    for (q, dist) in c.charges().iter().zip(&nn.distances) {
                        rows.push(vec![k as f64, *q, *dist]);
                        all.push(*dist);
                    }
                }
                write_table(&out.join("nearest_neighbor.csv"), &stamped(rows.meta("blow_up", "N^(1/d)"), config))?;
                let hi = all.iter().cloned().fold(0.0, f64::max) * (1.0 + 1e-9);
                let h = Histogram::new(&all, a.nn_bins, 0.0, hi)?;
                let mut t = Table::new(&["lo", "hi", "count", "density"]);
                for b in 0..a.nn_bins {
                    t.push(vec![h.edges[b], h.edges[b + 1], h.counts[b] as f64, h.density[b]]);
                }
                write_table(&out.join("nearest_neighbor_hist.csv"), &stamped(t, config))?;
            }
            Observable::Correlation if planar_radial => {
                let edges: Vec<f64> = (0..=a.correlation_bins)
                    .map(|k| a.correlation_max * k as f64 / a.correlation_bins as f64)
                    .collect();
                for &fraction in &a.r0 {
                    let curve = match local_pair_correlation(configs, fraction * radius, a.correlation_width * radius, &edges) {
                        Err(GasError::InsufficientStatistics { found, required }) => {
                            eprintln!("hetgas: skipping correlation at r0={fraction}: {found} reference particles, need {required}");
                            summary.correlation_peaks.push((fraction, None));
                            continue;
                        }
                        other => other?,
                    };
                    summary.correlation_peaks.push((fraction, curve.first_peak()));
                    let t = correlation_table(&curve).meta("r0_fraction", fraction);
                    write_table(&out.join(format!("correlation_r0_{fraction:.2}.csv")), &stamped(t, config))?;
                }
            }
            Observable::Ordering => {
                let mut t = Table::new(&["replica", "metric"]);
                for (k, c) in configs.iter().enumerate() {
                    let m = match a.ordering_coordinate {
                        OrderingCoordinate::Radius => ordering_metric(c)?,
                        OrderingCoordinate::AbsAxis { axis } => ordering_metric_by(c, |x| x[axis].abs())?,
                    };
                    summary.ordering.push(m);
                    t.push(vec![k as f64, m]);
                }
                let mean = summary.ordering.iter().sum::<f64>() / summary.ordering.len().max(1) as f64;
                summary.ordering_mean = Some(mean);
                let t = t.meta("coordinate", format!("{:?}", a.ordering_coordinate)).meta("mean", mean);
                write_table(&out.join("ordering.csv"), &stamped(t, config))?;
            }
            // radial observables are undefined on a curved surface
            Observable::Radial | Observable::Correlation => {}
        }
    }
    write_json(&out.join("stats.json"), &summary)?;
    Ok(summary)
}

/// `predict`: mean-field profile files.
pub fn predict_files(config: &ScenarioConfig, spec: &GasSpec, out: &Path) -> Result<Prediction> {
    ensure_dir(out)?;
    let prediction = predict(spec)?;
    let points = config.analysis.profile_points;
    match &prediction {
        Prediction::Profile(p) => {
            write_table(&out.join("profile.csv"), &stamped(profile_table(p, points)?, config))?;
            write_json(&out.join("profile.json"), &p.metadata()?)?;
        }
        Prediction::Shells { layout, profile } => {
            write_table(&out.join("shells.csv"), &stamped(shell_table(layout), config))?;
            write_table(&out.join("profile.csv"), &stamped(profile_table(profile, points)?, config))?;
            write_json(&out.join("profile.json"), &profile.metadata()?)?;
        }
        Prediction::Partial(partial) => {
            let mut t = Table::new(&["weight", "charge"]);
            for set in &partial.level_sets {
                for q in &set.charges {
                    t.push(vec![set.weight, *q]);
                }
            }
            let t = t.meta("max_multiplicity", partial.max_multiplicity());
            write_table(&out.join("level_sets.csv"), &stamped(t, config))?;
        }
    }
    Ok(prediction)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplittingReport {
    pub minimized: SplitBreakdown,
    /// Same charges, positions drawn i.i.d. from the predicted profile.
    pub iid_sample: SplitBreakdown,
    pub converged: bool,
}

/// `splitting`: energy splitting of one minimized gas against its prediction.
pub fn splitting(config: &ScenarioConfig, out: &Path) -> Result<SplittingReport> {
    ensure_dir(out)?;
    let (spec, _) = effective_spec(config, out)?;
    let profile = predict(&spec)?
        .profile()
        .cloned()
        .ok_or_else(|| GasError::WrongRegime("splitting needs a radial prediction".into()))?;
    let options = MinimizeOptions {
        schedule: config.run.schedule.clone(),
        seed: config.run.seed,
        charge_sampling: config.run.sampling,
        ..Default::default()
    };
    let result = minimize(&spec, config.run.n, &options)?;
    let minimized = splitting_terms(&result.config, &profile, &spec)?;
    let iid = profile.sample_configuration(config.run.n, config.run.seed, false)?;
    let iid_sample = splitting_terms(&iid, &profile, &spec)?;
    let report = SplittingReport { minimized, iid_sample, converged: result.converged };
    write_json(&out.join("splitting.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub inverse: Option<InverseSummary>,
    pub replicas: Vec<ReplicaSummary>,
    pub stats: StatsSummary,
    pub predicted: bool,
    pub roundtrip_rms: Option<f64>,
}

/// `scenario`: inverse (if configured), simulate, stats and predict.
pub fn scenario(config: &ScenarioConfig, out: &Path) -> Result<ScenarioReport> {
    ensure_dir(out)?;
    let (spec, inverse) = effective_spec(config, out)?;
    let results = run_replicas(&spec, config)?;
    let replicas = write_simulation(config, &results, out)?;
    let configs: Vec<Configuration> = results.into_iter().map(|r| r.config).collect();
    let summary = stats(config, &spec, &configs, out)?;
    let predicted = spec.is_radial_coulomb() && predict_files(config, &spec, out).is_ok();
    let mut roundtrip_rms = None;
    if let Some(inv) = &inverse {
        let (rms, table) = roundtrip_from_configs(&inv.target, &configs, config.analysis.bins)?;
        write_table(&out.join("roundtrip_radial.csv"), &stamped(table.meta("rms_relative", rms), config))?;
        roundtrip_rms = Some(rms);
    }
    let report = ScenarioReport {
        name: config.name.clone(),
        inverse: inverse.map(|i| i.summary),
        replicas,
        stats: summary,
        predicted,
        roundtrip_rms,
    };
    write_json(&out.join("scenario.json"), &report)?;
    convergence_check(&report.replicas, config.run.schedule.residual_threshold)?;
    Ok(report)
}

/// Relative RMS between the ensemble radial density and the target on the inner 95 %.
fn roundtrip_from_configs(target: &TargetDensity, configs: &[Configuration], bins: usize) -> Result<(f64, Table)> {
    let radius = target.support_radius();
    let h = radial_profiles_within(configs, bins, radius)?;
    let d = target.dimension() as i32;
    let centers = h.centers();
    let mut t = Table::new(&["r", "rho", "rho_se", "target"]);
    let (mut num, mut den) = (0.0, 0.0);
    for b in 0..h.bins() {
        let (lo, hi) = (h.edges[b], h.edges[b + 1]);
        let samples = 64;
        // bin average of the target in r^d
        let avg = (0..samples)
            .map(|k| {
                let u = lo.powi(d) + (hi.powi(d) - lo.powi(d)) * (k as f64 + 0.5) / samples as f64;
                target.value(u.powf(1.0 / d as f64))
            })
            .sum::<f64>()
            / samples as f64;
        t.push(vec![centers[b], h.density[b], h.density_se[b], avg]);
        if centers[b] < 0.95 * radius {
            num += (h.density[b] - avg).powi(2);
            den += avg * avg;
        }
    }
    Ok(((num / den).sqrt(), t))
}

/// `inverse`: reconstruction, plus a simulated roundtrip when requested.
pub fn inverse(config: &ScenarioConfig, out: &Path) -> Result<InverseSummary> {
    let outcome = run_inverse(config, out)?;
    let inv = config.inverse.as_ref().expect("checked by run_inverse");
    if inv.roundtrip {
        let options = RoundtripOptions {
            n: config.run.n,
            replicas: config.run.replicas,
            seed: config.run.seed,
            bins: config.analysis.bins,
            schedule: config.run.schedule.clone(),
            control: inv.control,
            ..Default::default()
        };
        let weight = inv.weight.clone().unwrap_or_else(|| config.gas.weight.clone());
        let report = verify_roundtrip(&outcome.target, &weight, &options)?;
        let mut t = Table::new(&["r", "rho", "rho_se", "target"]);
        let centers = report.histogram.centers();
        for b in 0..report.histogram.bins() {
            t.push(vec![centers[b], report.histogram.density[b], report.histogram.density_se[b], report.target_bins[b]]);
        }
        write_table(&out.join("roundtrip_radial.csv"), &stamped(t.meta("rms_relative", report.rms_relative), config))?;
        write_json(&out.join("roundtrip.json"), &report)?;
    }
    Ok(outcome.summary)
}
