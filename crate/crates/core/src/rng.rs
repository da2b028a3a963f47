//! Counter-based seed splitting.
//!
//! Every random stream is derived from the run seed and a path of integer
//! tags, so a stream's contents do not depend on which other streams were
//! drawn first or on which thread draws them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DATA: u64 = 0x01;
pub const VAE: u64 = 0x02;
pub const ENSEMBLE: u64 = 0x03;
pub const INIT: u64 = 0x04;
pub const SHUFFLE: u64 = 0x05;
pub const NOISE: u64 = 0x06;
pub const SEARCH: u64 = 0x07;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, tags))
}
