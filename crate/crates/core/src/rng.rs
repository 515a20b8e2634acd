//! Seeded, stream-separated randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`], a thin wrapper
//! over ChaCha8 (`rand_chacha`). ChaCha output is a pure function of the
//! 256-bit key and the 64-bit stream word, so a given `(seed, stream)` pair
//! yields the same bits on every platform. The 64-bit seed is expanded to the
//! key with `SeedableRng::seed_from_u64` (PCG32 expansion, fixed by `rand_core`).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent generator for a sub-task, derived from this one's seed.
    ///
    /// Forking does not advance `self`, so the child depends only on
    /// `(seed, stream, tag)`.
    pub fn fork(&self, tag: u64) -> SeededRng {
        let mixed = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(17)
            ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03);
        SeededRng::new(self.seed, mixed.wrapping_add(tag))
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_stream_reproduce() {
        let mut a = SeededRng::new(7, 3);
        let mut b = SeededRng::new(7, 3);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn streams_differ() {
        let mut a = SeededRng::new(7, 0);
        let mut b = SeededRng::new(7, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn fork_is_pure() {
        let mut parent = SeededRng::new(11, 2);
        let c1 = parent.fork(5);
        let _: f64 = parent.random();
        let c2 = parent.fork(5);
        let mut c1 = c1;
        let mut c2 = c2;
        assert_eq!(c1.next_u64(), c2.next_u64());
        assert_ne!(parent.fork(5).next_u64(), parent.fork(6).next_u64());
    }

    #[test]
    fn known_first_draw_is_stable() {
        // Pinned so that an accidental generator change is caught.
        let mut r = SeededRng::new(0, 0);
        let first = r.next_u64();
        let mut again = SeededRng::new(0, 0);
        assert_eq!(first, again.next_u64());
        assert_eq!(first, 0xb585_f767_a79a_3b6c);
    }
}
