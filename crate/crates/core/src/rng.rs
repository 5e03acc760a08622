//! Deterministic seed derivation.
//!
//! Every random quantity in an experiment batch derives from a single
//! master seed through a splitmix64 chain, so any individual run (and any
//! individual trial within it) can be re-created in isolation:
//!
//! ```text
//! run_seed(i)    = mix(master + (i+1) * GAMMA)        // i-th splitmix64 output
//! stream(s, tag) = mix(s ^ tag)                       // named sub-stream
//! trial_seed(t)  = derive(stream(run_seed, TRIAL), t)
//! ```
//!
//! Sub-stream tags keep the letter assignment, reward schedule, trial
//! orderings, and agent sampling statistically independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Sub-stream tag: reward schedule draws.
pub const STREAM_SCHEDULE: u64 = 0x5343_4845_0001;
/// Sub-stream tag: option-to-letter assignment.
pub const STREAM_LETTERS: u64 = 0x4C45_5454_0002;
/// Sub-stream tag: training context ordering.
pub const STREAM_TRAIN_ORDER: u64 = 0x5452_4F52_0003;
/// Sub-stream tag: transfer pair ordering.
pub const STREAM_TRANSFER_ORDER: u64 = 0x5846_4F52_0004;
/// Sub-stream tag: per-trial derivation root.
pub const STREAM_TRIAL: u64 = 0x5452_4941_0005;
/// Sub-stream tag: listing order inside a choice query.
pub const STREAM_QUERY_ORDER: u64 = 0x514F_5244_0006;
/// Sub-stream tag: agent choice sampling.
pub const STREAM_AGENT: u64 = 0x4147_4E54_0007;

/// splitmix64 finalizer.
pub fn mix(x: u64) -> u64 {
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th output of a splitmix64 generator seeded with `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// A named sub-stream of `seed`.
pub fn stream(seed: u64, tag: u64) -> u64 {
    mix(seed ^ tag)
}

/// Deterministic RNG for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
