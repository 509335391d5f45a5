//! Seeded random streams.
//!
//! Every random decision draws from ChaCha with 8 rounds (`rand_chacha`'s
//! `ChaCha8Rng`). A stream is identified by a 64-bit seed and a purpose:
//!
//! ```text
//! key    = seed as 8 little-endian bytes, then 24 zero bytes
//! stream = purpose id (see the `Purpose` discriminants)
//! ```
//!
//! Uniform reals take the top 53 bits of `next_u64` divided by 2^53; bounded
//! integers use the high word of a 64x64->128 multiply. Both are fully
//! determined by the ChaCha output so all platforms agree.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Rng;

/// Independent stream families derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Task = 0,
    TestSet = 1,
    Collect = 2,
    Sample = 3,
    Init = 4,
    Explore = 5,
    Ablation = 6,
    Expert = 7,
    Decision = 8,
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(purpose as u64);
    rng
}

/// Uniform in [0, 1).
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `0..n`; `n` must be positive.
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0, "below(0)");
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

pub fn bernoulli(rng: &mut impl RngCore, p: f64) -> bool {
    unit(rng) < p
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    /// `seed-hex:stream:word_pos`.
    pub fn encode(&self) -> String {
        let hex: String = self.seed.iter().map(|b| format!("{b:02x}")).collect();
        format!("{hex}:{}:{}", self.stream, self.word_pos)
    }

    pub fn decode(s: &str) -> Option<Self> {
        let mut parts = s.trim().split(':');
        let hex = parts.next()?;
        let stream = parts.next()?.parse().ok()?;
        let word_pos = parts.next()?.parse().ok()?;
        if parts.next().is_some() || hex.len() != 64 {
            return None;
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(hex.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(RngState { seed, stream, word_pos })
    }
}
