//! Shared fixtures for the benchmarks in `benches/`.

use annealpg::envs::make_random;
use annealpg::{AbsorbingMdp, PolicyParams};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Layered random instance with a random policy, both fixed by `seed`.
pub fn fixture(num_states: usize, num_actions: usize, horizon: usize, seed: u64) -> (AbsorbingMdp, PolicyParams) {
    let mdp = AbsorbingMdp::new(make_random(num_states, num_actions, horizon, seed).expect("valid sizes"))
        .expect("layered instances absorb");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = PolicyParams::random_uniform(num_states, num_actions, 3.0, &mut rng);
    (mdp, theta)
}

/// Sizes swept by the benchmarks: `(|S|, |A|, T)`.
pub const SIZES: [(usize, usize, usize); 3] = [(8, 3, 6), (32, 4, 16), (128, 4, 32)];
