//! Seed derivation.
//!
//! Every rng stream in a run is derived from `(base_seed, purpose, index)` with
//! a SplitMix64 finaliser chain:
//!
//! ```text
//! h = mix(base_seed ^ 0x9E3779B97F4A7C15)
//! h = mix(h ^ fnv1a(purpose))
//! h = mix(h ^ index)
//! ```
//!
//! Distinct purposes ("train", "eval", "policy", ...) never share streams, so
//! evaluation environments are disjoint from training environments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags used across the crate.
pub mod purpose {
    pub const TRAIN_ENV: &str = "train-env";
    pub const EVAL_ENV: &str = "eval-env";
    pub const POLICY: &str = "policy";
    pub const INIT: &str = "init";
    pub const WARMSTART: &str = "warmstart";
    pub const EVAL_POLICY: &str = "eval-policy";
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn derive_seed(base_seed: u64, purpose: &str, index: u64) -> u64 {
    let h = mix(base_seed ^ 0x9E37_79B9_7F4A_7C15);
    let h = mix(h ^ fnv1a(purpose));
    mix(h ^ index)
}

pub fn derive_rng(base_seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base_seed, purpose, index))
}
