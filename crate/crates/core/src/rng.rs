//! Seeded random streams.
//!
//! Every random decision comes from a ChaCha8 generator. A stream is
//! identified by `(seed, purpose, round)`: the generator is seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and the 64-bit ChaCha stream id is set to
//! `purpose << 32 | round`. Trials of one experiment use
//! [`trial_seed`]`(base_seed, trial)` as their seed, so each (trial, round)
//! pair owns a disjoint stream and reruns are bit-identical on every platform.
//!
//! Test outcomes are drawn by random access into the oracle stream of the
//! round: the test anchored at sample id `a` reads the 64-bit word at
//! position `a`. Tests in one round are disjoint, so each test owns one word,
//! and the same test gets the same draw no matter which other tests ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the generator, recorded in reports.
pub const GENERATOR: &str = "ChaCha8";

/// What a stream is used for. The discriminant is part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Population = 1,
    Assignment = 2,
    SecondAssignment = 3,
    Oracle = 4,
    Difficulty = 5,
}

/// Opens the stream for `(seed, purpose, round)`.
pub fn stream(seed: u64, purpose: Purpose, round: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | u64::from(round));
    rng
}

/// Opens the stream for `(seed, purpose, round)` positioned at 64-bit word `slot`.
pub fn stream_at(seed: u64, purpose: Purpose, round: u32, slot: u64) -> ChaCha8Rng {
    let mut rng = stream(seed, purpose, round);
    rng.set_word_pos(u128::from(slot) * 2);
    rng
}

/// Seed for trial `trial` of an experiment: the `trial`-th SplitMix64 output
/// (zero-based) from `base`.
pub fn trial_seed(base: u64, trial: u32) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(u64::from(trial) + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
