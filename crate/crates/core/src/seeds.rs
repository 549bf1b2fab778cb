//! Counter-based random streams.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream keyed by
//! `(seed, domain)` and selected by a 64-bit stream index, so any frame or
//! optimizer step can be regenerated independently of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Each consumer of randomness owns one.
pub mod domain {
    pub const INIT_PGN: u64 = 1;
    pub const INIT_UAEN: u64 = 2;
    pub const INIT_AUDN: u64 = 3;
    pub const ACTIVITY: u64 = 0x10;
    pub const FRAME: u64 = 0x20;
    pub const SHUFFLE: u64 = 0x30;
    pub const DROPOUT: u64 = 0x40;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let base = splitmix64(seed ^ splitmix64(domain));
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(base.wrapping_add(i as u64)).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
