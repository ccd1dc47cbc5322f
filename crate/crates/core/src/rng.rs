//! Seed plumbing: all randomness in a run flows from a single `u64` seed
//! through named sub-streams, so that components (simulation, pilot, chain,
//! auxiliary variables, path draws) can be reproduced independently.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a reproducible generator for the sub-stream `label` of `seed`.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for b in label.bytes() {
        state = splitmix64(state ^ u64::from(b));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Derive a generator keyed by two indices (e.g. observation step and
/// particle index) from a base seed.
pub fn indexed_stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let state = splitmix64(splitmix64(seed ^ a.wrapping_mul(0x9E37_79B9)) ^ b);
    ChaCha8Rng::seed_from_u64(state)
}
