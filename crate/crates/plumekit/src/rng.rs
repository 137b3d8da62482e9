//! Seed derivation. All randomness in the toolkit flows from a single u64
//! seed; each subsystem draws from its own labelled stream so that adding a
//! consumer never perturbs the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent RNG stream from the master seed and a fixed label.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // FNV-1a over the label selects the ChaCha stream id.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    rng.set_stream(h);
    rng
}
