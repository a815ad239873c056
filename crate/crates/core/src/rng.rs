//! Seed derivation. Every stochastic stream in the crate is a ChaCha8
//! generator seeded from a hash of its logical coordinates, so parallel
//! workers never share a stream and reruns are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep e.g. environment noise and action sampling of the same
/// episode independent of each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Env = 0x454e_5600,
    Actor = 0x4143_5400,
    Init = 0x494e_4900,
    Train = 0x5452_4e00,
    Split = 0x5350_4c00,
    Episode = 0x4550_5300,
    Eval = 0x4556_4c00,
    Probe = 0x5052_4200,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a list of words.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x6a09_e667_f3bc_c908, |acc, &w| {
        splitmix64(acc ^ splitmix64(w))
    })
}

pub fn derive(seed: u64, stream: Stream, index: u64) -> u64 {
    mix(&[seed, stream as u64, index])
}

pub fn rng_for(seed: u64, stream: Stream, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}
