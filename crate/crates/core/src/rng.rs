//! Seeded, resumable random streams.
//!
//! A stream is ChaCha8 keyed by the master seed and positioned on the
//! ChaCha stream id `stream_index`. The 256-bit key is the first four
//! outputs of SplitMix64 started at `master_seed`, written little-endian.
//! Distinct stream indices select disjoint keystreams of the same key, so
//! parallel runs need no coordination beyond their index.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(master_seed: u64) -> [u8; 32] {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Serializable position of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub master_seed: u64,
    pub stream_index: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(derive_key(master_seed));
        rng.set_stream(stream_index);
        RngStream {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn state(&self) -> RngState {
        RngState {
            master_seed: self.master_seed,
            stream_index: self.stream_index,
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut s = RngStream::new(state.master_seed, state.stream_index);
        s.rng.set_word_pos(state.word_pos);
        s
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by rejection; exact for every `n >= 1`.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.rng.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Draws uniform directions in `0..2d` from a bit buffer, a few bits per
/// draw. Leftover bits are discarded when the sampler is dropped, so a
/// fresh sampler per walker keeps the stream position a function of the
/// number of completed walks.
#[derive(Clone, Debug)]
pub struct DirectionSampler {
    bits: u64,
    left: u32,
    width: u32,
    mask: u64,
    n: u64,
}

impl DirectionSampler {
    pub fn new(d: usize) -> Self {
        let n = 2 * d as u64;
        let width = 64 - (n - 1).leading_zeros();
        DirectionSampler {
            bits: 0,
            left: 0,
            width,
            mask: (1u64 << width) - 1,
            n,
        }
    }

    #[inline]
    pub fn next(&mut self, rng: &mut RngStream) -> usize {
        loop {
            if self.left < self.width {
                self.bits = rng.next_u64();
                self.left = 64;
            }
            let v = self.bits & self.mask;
            self.bits >>= self.width;
            self.left -= self.width;
            if v < self.n {
                return v as usize;
            }
        }
    }
}
