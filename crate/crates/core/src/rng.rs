//! Deterministic random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by the master
//! seed and a path of integer tags (session, trial, bootstrap chunk, ...).
//! Streams never overlap, so work can be split across threads in any order
//! and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from a master seed and a tag path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = master;
    let mut acc = splitmix64(&mut state);
    for &tag in path {
        state ^= tag.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(17);
        acc ^= splitmix64(&mut state);
        state = acc;
    }
    acc
}

/// Independent generator for the given tag path.
pub fn substream(master: u64, path: &[u64]) -> StreamRng {
    let mut state = derive_seed(master, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
