//! Deterministic random-number streams.
//!
//! Every stochastic routine takes a 64-bit seed and derives independent
//! substreams through a SplitMix64 expansion of the master seed, so runs are
//! reproducible bit-for-bit across platforms and replication counts can be
//! changed without perturbing earlier replications.

use rand_chacha::ChaCha12Rng;

/// The project-wide generator type.
pub type ProjectRng = ChaCha12Rng;

/// SplitMix64 step; the standard finalizer constants.
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
}

fn splitmix64_output(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives the full 256-bit ChaCha key for substream `index` of `seed`.
fn stream_key(seed: u64, index: u64) -> [u8; 32] {
    let mut state = seed ^ splitmix64_output(index.wrapping_mul(0xD1B54A32D192ED03));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        splitmix64(&mut state);
        chunk.copy_from_slice(&splitmix64_output(state).to_le_bytes());
    }
    key
}

/// Generator for substream `index` of master `seed`. Distinct indices give
/// statistically independent streams; the same pair is always the same
/// stream.
pub fn stream(seed: u64, index: u64) -> ProjectRng {
    use rand::SeedableRng;
    ProjectRng::from_seed(stream_key(seed, index))
}

/// Generator for the primary stream of `seed`.
pub fn master(seed: u64) -> ProjectRng {
    stream(seed, 0)
}
