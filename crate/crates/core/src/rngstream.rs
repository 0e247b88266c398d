//! Deterministic RNG stream derivation.
//!
//! Every source of randomness in a run is a ChaCha8 stream derived from the
//! master seed, a domain tag, and up to two indices (token, round). Parallel
//! and sequential schedules therefore consume identical random sequences.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for per-token roaming (start draw + hops) within a round.
pub const DOMAIN_TOKEN: u64 = 0x01;
/// Stream used for per-round mini-batch index sampling.
pub const DOMAIN_BATCH: u64 = 0x02;
/// Stream used for synthetic dataset generation.
pub const DOMAIN_DATA: u64 = 0x03;
/// Stream used for random-graph sampling.
pub const DOMAIN_GRAPH: u64 = 0x04;
/// Stream used for deterministic solver start vectors.
pub const DOMAIN_SOLVER: u64 = 0x05;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the child stream identified by `(master, domain, a, b)`.
///
/// The 256-bit ChaCha key is squeezed from a SplitMix64 state that absorbs
/// all four inputs in order, so distinct identifiers yield independent
/// streams and the same identifier always yields the same stream.
pub fn child_stream(master: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut state = master;
    for input in [domain, a, b] {
        state ^= splitmix64(&mut (input ^ 0xD1B5_4A32_D192_ED03));
        state = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
