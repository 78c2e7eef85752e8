//! Named, counter-keyed random streams.
//!
//! Every draw is made from a generator keyed by `(seed, stream, keys...)`,
//! so the randomness a consumer sees never depends on which other consumers
//! exist or in which order they ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Augment,
    Sampler,
    Split,
    Synthetic,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1_11,
            Stream::Shuffle => 0x2_22,
            Stream::Augment => 0x3_33,
            Stream::Sampler => 0x4_44,
            Stream::Split => 0x5_55,
            Stream::Synthetic => 0x6_66,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to key streams by parameter name.
pub fn name_key(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(seed: u64, stream: Stream, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed ^ splitmix(stream.tag())), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn stream_rng(seed: u64, stream: Stream, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, keys))
}
