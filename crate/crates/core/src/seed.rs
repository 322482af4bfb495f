//! Seed derivation for independent random streams.
//!
//! A stream seed is obtained by folding a domain tag and a list of integer
//! keys into the master seed with the SplitMix64 finalizer:
//!
//! ```text
//! h = mix(master)
//! for byte in tag:  h = mix(h ^ byte)
//! for key in keys:  h = mix(h ^ key)
//! ```
//!
//! Keys are derived from scenario contents (parameter bit patterns), not grid
//! positions, so editing one scenario never shifts the stream of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, tag: &str, keys: &[u64]) -> u64 {
    let mut h = mix(master);
    for b in tag.bytes() {
        h = mix(h ^ u64::from(b));
    }
    for &k in keys {
        h = mix(h ^ k);
    }
    h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tag: &str, keys: &[u64]) -> Rng {
    rng(derive(master, tag, keys))
}
