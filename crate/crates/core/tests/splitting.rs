use hetgas::energy::splitting_terms;
use hetgas::equilibrium::{predict, EquilibriumProfile};
use hetgas::gasmodel::{ChargeDistribution, Configuration, GasSpec, KernelSpec, WeightSpec};
use hetgas::minimizer::{minimize, AnnealSchedule, MinimizeOptions};
use proptest::prelude::*;

fn linear_uniform() -> (GasSpec, EquilibriumProfile) {
    let spec = GasSpec::new(2, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 2.0).unwrap());
    let profile = predict(&spec).unwrap().profile().cloned().unwrap();
    (spec, profile)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identity_holds_for_arbitrary_configurations(
        points in prop::collection::vec((1.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 3..40)
    ) {
        let (spec, profile) = linear_uniform();
        let charges = points.iter().map(|p| p.0).collect();
        let positions = points.iter().flat_map(|p| [p.1, p.2]).collect();
        let config = Configuration::new(2, positions, charges).unwrap();
        let b = splitting_terms(&config, &profile, &spec).unwrap();
        let sum = b.leading + b.zeta_term + b.quadratic_remainder;
        prop_assert!((sum - b.total_check).abs() <= 1e-6 * b.total_check.abs().max(1.0), "{sum} vs {}", b.total_check);
    }
}

#[test]
fn identity_holds_for_riesz_and_three_dimensions() {
    for spec in [
        GasSpec::new(3, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 2.0).unwrap()),
        GasSpec::new(2, WeightSpec::default(), ChargeDistribution::uniform(1.0, 2.0).unwrap()),
    ] {
        let profile = predict(&spec).unwrap().profile().cloned().unwrap();
        let config = profile.sample_configuration(120, 3, false).unwrap();
        let b = splitting_terms(&config, &profile, &spec).unwrap();
        assert!(b.relative_identity_error() < 1e-6, "{b:?}");
    }
    let riesz = GasSpec::new(2, WeightSpec::Linear, ChargeDistribution::uniform(1.0, 2.0).unwrap())
        .with_kernel(KernelSpec::Riesz { eta: 0.5 });
    assert!(predict(&riesz).is_err(), "no radial prediction for a Riesz gas");
}

#[test]
fn minimized_gas_has_smaller_quadratic_remainder_than_iid_sample() {
    let (spec, profile) = linear_uniform();
    let n = 300;
    let options = MinimizeOptions {
        schedule: AnnealSchedule::fast(),
        seed: 4,
        ..Default::default()
    };
    let minimized = minimize(&spec, n, &options).unwrap().config;
    let iid = profile.sample_configuration(n, 4, false).unwrap();
    let a = splitting_terms(&minimized, &profile, &spec).unwrap();
    let b = splitting_terms(&iid, &profile, &spec).unwrap();
    assert!(a.quadratic_remainder < b.quadratic_remainder, "{} vs {}", a.quadratic_remainder, b.quadratic_remainder);
    assert!(a.total_check < b.total_check);
}
