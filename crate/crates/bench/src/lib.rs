//! Shared inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mavtrack_core::Vec3;

/// Uniform cloud in a 20 m x 20 m x 3 m box.
pub fn random_cloud(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.gen_range(0.0..20.0), rng.gen_range(-10.0..10.0), rng.gen_range(0.0..3.0)))
        .collect()
}
