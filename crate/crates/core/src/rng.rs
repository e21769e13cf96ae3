//! Counter-based seed fan-out.
//!
//! Every random stream is keyed by `(master seed, tag, index)`. The key is
//! hashed with FNV-1a over the tag and mixed through SplitMix64, then used
//! to seed a ChaCha8 generator. Streams for different tags or indices are
//! independent of each other and of the order in which they are created,
//! so parallel and sequential runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed for `(tag, index)` under `seed`.
pub fn derive(seed: u64, tag: &str, index: u64) -> u64 {
    let a = splitmix64(seed ^ fnv1a(tag));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    let key = derive(seed, tag, index);
    let mut bytes = [0u8; 32];
    for (k, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(k as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
