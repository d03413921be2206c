//! Seed derivation. Every random stream is a pure function of a root seed
//! plus a path of indices, so work can be split across threads without
//! changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a sequence of stream identifiers.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

// Stream tags, kept distinct so that e.g. sample 3's appearance stream never
// aliases epoch 3's shuffle stream.
pub(crate) const TAG_SCENE: u64 = 1;
pub(crate) const TAG_CAP: u64 = 2;
pub(crate) const TAG_SPLIT: u64 = 3;
pub(crate) const TAG_INIT: u64 = 4;
pub(crate) const TAG_SHUFFLE: u64 = 5;
pub(crate) const TAG_AUGMENT: u64 = 6;
