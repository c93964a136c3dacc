//! Splittable, counter-based random streams.
//!
//! A [`StreamKey`] names a position in a tree of streams. Child keys are
//! derived by mixing the parent key with an index, and every key seeds an
//! independent ChaCha8 generator, so work item `r` always sees the same draws
//! no matter which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Child stream `index` of this key.
    pub fn split(self, index: u64) -> Self {
        let a = splitmix64(self.0 ^ 0x6a09_e667_f3bc_c908);
        Self(splitmix64(a ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
