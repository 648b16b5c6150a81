//! Named, counter-addressed random streams.
//!
//! A stream is identified by `(seed, purpose, index, sub)`. Any two distinct
//! addresses give independent ChaCha streams, so work can be split across
//! threads without the draws depending on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. The discriminant is mixed into the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Channel = 1,
    TagDirection = 2,
    TagPlacement = 3,
    Batch = 4,
    MonteCarlo = 5,
    Ber = 6,
    Init = 7,
    Oracle = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Build the generator for one stream address.
pub fn stream(seed: u64, purpose: Purpose, index: u64, sub: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed),
        splitmix(seed ^ (purpose as u64).rotate_left(17)),
        splitmix(index.wrapping_add(0xA5A5_5A5A)),
        splitmix(seed.wrapping_add(purpose as u64) ^ index.rotate_left(32)),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(sub);
    rng
}
