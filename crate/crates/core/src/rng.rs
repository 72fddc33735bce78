//! Seed derivation. Every random draw is addressed by a tuple of coordinates
//! (master seed, individual, variable, timestep, purpose), so results do not
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes keep streams used for different roles disjoint.
pub mod purpose {
    pub const ROLLOUT: u64 = 1;
    pub const INTERVENE: u64 = 2;
    pub const LABEL: u64 = 3;
    pub const BALL: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const TRIAL: u64 = 7;
}

const fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds coordinates into one 64-bit seed.
pub fn derive(master: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix(master), |acc, &c| splitmix(acc ^ splitmix(c)))
}

pub fn stream(master: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, coords))
}

/// Stream for one cell of a simulation; negative timesteps (burn-in) map to
/// distinct coordinates via two's complement.
pub fn cell(master: u64, individual: u64, var: usize, t: i64, purpose: u64) -> ChaCha8Rng {
    stream(master, &[purpose, individual, var as u64, t as u64])
}
