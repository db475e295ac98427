//! Counter-based random streams.
//!
//! Every random quantity in the engine is addressed by a key path such as
//! `(seed, LOOP, loop_index, dyadic_node)` or `(seed, X_DRAW, beta_node,
//! loop_index, repeat)`. The key is hashed into the starting counter of a
//! SplitMix64 generator, so any single draw can be reproduced in isolation
//! and results never depend on how work is split across threads.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Domain-separation tags for the different consumers of randomness.
pub mod tag {
    pub const LOOP: u64 = 0x4c4f_4f50;
    pub const X_DRAW: u64 = 0x5844_5257;
    pub const SPECTRAL: u64 = 0x5350_4543;
    pub const VALIDATE: u64 = 0x5641_4c44;
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a key path into a 64-bit stream key.
#[inline]
pub fn stream_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(seed ^ 0x6a09_e667_f3bc_c908), |h, &p| subkey(h, p))
}

/// Extends a stream key by one path component:
/// `subkey(stream_key(s, &[a]), b) == stream_key(s, &[a, b])`.
#[inline]
pub fn subkey(key: u64, component: u64) -> u64 {
    mix64(key ^ mix64(component.wrapping_add(GOLDEN_GAMMA)))
}

/// SplitMix64 positioned at an arbitrary counter.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { state: key }
    }

    pub fn from_path(seed: u64, path: &[u64]) -> Self {
        Self::new(stream_key(seed, path))
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
