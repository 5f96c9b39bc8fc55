//! Seed derivation shared by the trainer and the cohort generator.
//!
//! Every random stream is a `ChaCha8Rng` seeded through [`derive_seed`], a
//! SplitMix64 mix of a base seed and a stream index. Reimplementing both
//! (ChaCha with 8 rounds, `seed_from_u64` expansion, SplitMix64 below)
//! reproduces cohorts and initializations bit for bit.

/// SplitMix64 finalizer applied to `base + (stream + 1)·γ`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Name recorded in generated files so the stream algorithm is explicit.
pub const RNG_ALGORITHM: &str = "chacha8+splitmix64";
