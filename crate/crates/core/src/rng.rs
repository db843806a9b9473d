//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream, index)`. A [`DrawStream`] is a
//! cursor over one stream; seeking to an index and reading gives the same bits
//! as reading sequentially up to it, so results never depend on how work is
//! split across threads.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream used for utility matrices.
pub const UTILITY_STREAM: u64 = 0;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit seed.
///
/// `h = mix64(h + GOLDEN_GAMMA + mix64(part))`, starting from `h = 0`. The
/// fold is order sensitive, so `(a, b)` and `(b, a)` yield different seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |h, &p| {
        mix64(h.wrapping_add(GOLDEN_GAMMA).wrapping_add(mix64(p)))
    })
}

/// Caller-owned cursor over one counter-addressed stream.
#[derive(Debug, Clone)]
pub struct DrawStream {
    rng: ChaCha8Rng,
    index: u64,
}

impl DrawStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        DrawStream { rng, index: 0 }
    }

    /// Cursor positioned so that the next draw has the given index.
    pub fn at(seed: u64, stream: u64, index: u64) -> Self {
        let mut s = DrawStream::new(seed, stream);
        s.seek(index);
        s
    }

    pub fn seek(&mut self, index: u64) {
        // One draw consumes two 32-bit words of keystream.
        self.rng.set_word_pos(u128::from(index) * 2);
        self.index = index;
    }

    /// Index of the next draw.
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn next_u64(&mut self) -> u64 {
        self.index += 1;
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn next_open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}
