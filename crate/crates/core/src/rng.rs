//! Seed derivation for independent, reproducible PRNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of stream coordinates into a new seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, parts))
}

// Domain tags keep streams used for different purposes apart.
pub(crate) const TAG_SYNTH: u64 = 0x5359_4e54;
pub(crate) const TAG_SPLIT: u64 = 0x5350_4c54;
pub(crate) const TAG_BALANCE: u64 = 0x4241_4c41;
pub(crate) const TAG_PARTITION: u64 = 0x5041_5254;
pub(crate) const TAG_INIT: u64 = 0x494e_4954;
pub(crate) const TAG_EPOCH: u64 = 0x4550_4f43;
