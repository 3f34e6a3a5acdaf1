//! Seeded, indexed random substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose key is the
//! user seed and whose stream id is a hash of a domain tag and up to two
//! indices. Work can then be split across threads in any way without
//! changing a single output bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams used for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ParticleNoise = 1,
    Initial = 2,
    GibbsExact = 3,
    Mala = 4,
    Kernel = 5,
    Observable = 6,
    Generic = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(domain: Domain, a: u64, b: u64) -> u64 {
    splitmix64(domain as u64 ^ splitmix64(a ^ splitmix64(b.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// Independent stream for `(domain, a, b)` under `seed`.
pub fn substream(seed: u64, domain: Domain, a: u64, b: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(domain, a, b));
    rng
}
