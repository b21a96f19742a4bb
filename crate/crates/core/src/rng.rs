//! Seeded random streams.
//!
//! Every random draw in the crate goes through a ChaCha generator keyed by a
//! master seed plus a stream id, so independent quantities (the X sample, the
//! Y sample, the noise) never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    X = 1,
    Y = 2,
    Noise = 3,
    Holdout = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Generic generator for a bare seed (stream 0).
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for position `path` under `master`, e.g. `(cell, repetition)`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}
