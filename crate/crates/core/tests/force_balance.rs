use hetgas::equilibrium::predict;
use hetgas::gasmodel::{ChargeDistribution, GasSpec, WeightSpec};
use hetgas::minimizer::residual_force_norm;

fn residual_of_quasi_sample(spec: &GasSpec, n: usize) -> f64 {
    let profile = predict(spec).unwrap().profile().cloned().unwrap();
    let config = profile.sample_configuration(n, 7, true).unwrap();
    residual_force_norm(&config, spec).unwrap()
}

fn uniform() -> ChargeDistribution {
    ChargeDistribution::uniform(1.0, 2.0).unwrap()
}

#[test]
fn continuous_profile_balances_forces_at_n_2000() {
    let spec = GasSpec::new(2, WeightSpec::Linear, uniform());
    let r = residual_of_quasi_sample(&spec, 2000);
    assert!(r < 0.02, "residual {r}");
}

/// Least-squares slope of log residual against log N.
fn decay_exponent(spec: &GasSpec) -> f64 {
    let pts: Vec<(f64, f64)> = [500usize, 1000, 2000, 4000]
        .iter()
        .map(|&n| ((n as f64).ln(), residual_of_quasi_sample(spec, n).ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    cov / var
}

#[test]
fn residual_decays_at_the_interparticle_rate() {
    // the max-norm residual of a discrete sample is set by the spacing N^(-1/d)
    let cases = [
        ("constant g", GasSpec::new(2, WeightSpec::default(), uniform()), -0.4),
        ("g = q", GasSpec::new(2, WeightSpec::Linear, uniform()), -0.4),
        ("g = 1/sqrt(q)", GasSpec::new(2, WeightSpec::InverseSqrt, uniform()), -0.4),
        (
            "three species",
            GasSpec::new(2, WeightSpec::Linear, ChargeDistribution::equal_atoms(&[1.0, 2.0, 3.0]).unwrap()),
            -0.4,
        ),
        ("g = q in 3-D", GasSpec::new(3, WeightSpec::Linear, uniform()), -0.25),
    ];
    for (name, spec, bound) in cases {
        let slope = decay_exponent(&spec);
        assert!(slope < bound, "{name}: slope {slope}");
    }
}
