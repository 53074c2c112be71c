use hetgas::gasmodel::{ChargeDistribution, ConfinementSpec, GasSpec, KernelSpec, ManifoldKind, ManifoldSpec, WeightSpec};
use hetgas::inverse::StepControl;
use hetgas::minimizer::AnnealSchedule;

use crate::config::{AnalysisConfig, InverseConfig, OrderingCoordinate, OutputConfig, RunConfig, ScenarioConfig, TargetChoice};
use crate::exit::ConfigError;

pub const PRESETS: [&str; 8] = [
    "fig1_increasing",
    "fig1_constant",
    "fig1_decreasing",
    "fig4_atom",
    "fig7_reconstruction",
    "fig8_eta",
    "fig9_sphere",
    "fig9_torus",
];

fn uniform_1_2() -> ChargeDistribution {
    ChargeDistribution::uniform(1.0, 2.0).expect("valid law")
}

fn scenario(name: &str, gas: GasSpec, n: usize, replicas: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        gas,
        run: RunConfig {
            n,
            replicas,
            schedule: AnnealSchedule::fast(),
            ..RunConfig::default()
        },
        analysis: AnalysisConfig::default(),
        inverse: None,
        output: OutputConfig::default(),
    }
}

fn on_manifold(name: &str, kind: ManifoldKind, axis: usize, weight: WeightSpec) -> ScenarioConfig {
    let gas = GasSpec::new(3, weight, uniform_1_2())
        .with_kernel(KernelSpec::Riesz { eta: -1.0 })
        .with_confinement(ConfinementSpec::CoordinateSquare { axis })
        .with_manifold(ManifoldSpec::new(kind));
    let mut s = scenario(name, gas, 1000, 1);
    s.analysis.ordering_coordinate = OrderingCoordinate::AbsAxis { axis };
    s
}

/// Named scenario mirroring one published figure.
pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let planar = |w: WeightSpec| GasSpec::new(2, w, uniform_1_2());
    let s = match name {
        "fig1_increasing" => scenario(name, planar(WeightSpec::Linear), 1000, 4),
        "fig1_constant" => scenario(name, planar(WeightSpec::default()), 1000, 4),
        "fig1_decreasing" => scenario(name, planar(WeightSpec::InverseSqrt), 1000, 4),
        "fig4_atom" => {
            let law = ChargeDistribution::equal_atoms(&[1.0, 2.0, 3.0]).expect("valid law");
            scenario(name, GasSpec::new(2, WeightSpec::Linear, law), 600, 4)
        }
        "fig7_reconstruction" => {
            // the charge law is replaced by the reconstruction
            let gas = GasSpec::new(2, WeightSpec::Inverse, ChargeDistribution::point(1.0).expect("valid law"));
            let mut s = scenario(name, gas, 1000, 100);
            s.analysis.bins = 16;
            s.inverse = Some(InverseConfig {
                target: TargetChoice::Fig7,
                weight: None,
                control: StepControl::default(),
                roundtrip: true,
            });
            s
        }
        "fig8_eta" => scenario(name, planar(WeightSpec::Linear).with_kernel(KernelSpec::Riesz { eta: 0.5 }), 1000, 1),
        "fig9_sphere" => on_manifold(name, ManifoldKind::UnitSphere, 2, WeightSpec::Linear),
        "fig9_torus" => on_manifold(name, ManifoldKind::Torus, 1, WeightSpec::Linear),
        other => {
            return Err(ConfigError(format!("unknown preset '{other}'; available: {}", PRESETS.join(", "))));
        }
    };
    Ok(s)
}
