#![allow(dead_code)]

use junctionflow::shape::HeightState;
use junctionflow::{build_reference, AngleWeights, GeometrySpec, ReferenceCluster};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn triod(n: usize) -> ReferenceCluster {
    build_reference(
        &GeometrySpec::Triod {
            leg_length: 1.0,
            intervals: n,
        },
        &AngleWeights::symmetric(),
    )
    .unwrap()
}

pub fn bubble(n: usize) -> ReferenceCluster {
    build_reference(
        &GeometrySpec::DoubleBubble {
            areas: [1.0, 1.0],
            intervals: n,
        },
        &AngleWeights::symmetric(),
    )
    .unwrap()
}

pub fn prism(n: usize, m: usize) -> ReferenceCluster {
    build_reference(
        &GeometrySpec::Prism {
            leg_length: 1.0,
            period: 1.0,
            intervals: n,
            ring: m,
        },
        &AngleWeights::symmetric(),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[allow(unused_imports)]
pub use junctionflow::checks::{log_slope, make_admissible, smooth_heights as smooth_rho};

pub fn admissible_state(cl: &ReferenceCluster, seed: u64, amp: f64) -> HeightState {
    junctionflow::checks::random_admissible(cl, seed, amp)
}
