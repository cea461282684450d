//! Seed fan-out.
//!
//! A single 64-bit master seed is split into independent substreams by
//! hashing a path of integer keys (particle id, depth, purpose tag, ...).
//! A particle's random stream therefore depends only on its own key path and
//! never on how many siblings exist or which thread steps it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed to every environment transition.
pub type SimRng = ChaCha8Rng;

pub(crate) const TAG_STEP: u64 = 0x5354_4550;
pub(crate) const TAG_BELIEF: u64 = 0x4245_4c46;
pub(crate) const TAG_INIT: u64 = 0x494e_4954;
pub(crate) const TAG_BUILD: u64 = 0x4255_494c;
pub(crate) const TAG_RESAMPLE: u64 = 0x5253_4d50;
pub(crate) const TAG_RANDOM: u64 = 0x524e_444d;
pub(crate) const TAG_EPISODE: u64 = 0x4550_4953;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    pub fn derive(self, key: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(key.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}
