//! Problem description: kernels, confinements, weights, charge laws and
//! particle configurations.

pub mod charge;
pub mod config;
pub mod confinement;
pub mod geometry;
pub mod kernel;
pub mod manifold;
pub mod spec;
pub mod weight;

pub use charge::{ChargeDistribution, ChargeForm, ChargeSampling};
pub use config::Configuration;
pub use confinement::{ConfinementSpec, CustomPotential};
pub use geometry::{ball_volume, geometric_constants, sphere_area, GeometricConstants};
pub use kernel::{KernelSpec, PairKernel};
pub use manifold::{ManifoldKind, ManifoldSpec};
pub use spec::GasSpec;
pub use weight::{CustomWeight, Monotonicity, WeightSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Draws `n` charges from `law` with a seeded generator.
pub fn sample_charges(law: &ChargeDistribution, n: usize, seed: u64, sampling: ChargeSampling) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    law.sample(n, sampling, &mut rng)
}
