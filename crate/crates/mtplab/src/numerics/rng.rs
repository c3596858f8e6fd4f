//! Seeded randomness with stable named substreams.
//!
//! Every consumer derives its own stream from the run seed and a label
//! ("init.embed.weight", "data-order", ...), so adding or removing one
//! consumer never shifts the draws of another. Backed by ChaCha8, whose
//! output is identical across platforms.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::Scalar;

/// Splitmix64 step; a small, well-known mixer used here to hash labels into
/// seed material. (std hashers are not stable across releases.)
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3; // arbitrary non-zero constant
    for &b in label.as_bytes() {
        state ^= b as u64;
        splitmix64(&mut state);
    }
    splitmix64(&mut state)
}

pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    /// Root stream for a run seed.
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: seed_chacha(seed, 0) }
    }

    /// Independent stream identified by `(run seed, label)`. Derivation reads
    /// no state from `self`, so derive order does not matter.
    pub fn derive(&self, label: &str) -> Rng {
        Rng { seed: self.seed, inner: seed_chacha(self.seed, label_hash(label)) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `n` draws from Normal(mean, std). Sampling happens in `f64` and is cast
    /// down, so f32 and f64 streams see the same underlying values.
    pub fn normal_vec<T: Scalar>(&mut self, n: usize, mean: f64, std: f64) -> Vec<T> {
        let dist = Normal::new(mean, std).expect("std must be finite and non-negative");
        (0..n).map(|_| T::from_f64(dist.sample(&mut self.inner))).collect()
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        items.shuffle(&mut self.inner);
    }

    pub fn gen_range(&mut self, range: std::ops::Range<usize>) -> usize {
        self.inner.gen_range(range)
    }

    pub fn gen_u64(&mut self) -> u64 {
        self.inner.gen()
    }
}

fn seed_chacha(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    // Fill the rest of the key by mixing both words so distinct (seed, stream)
    // pairs differ in many key bytes, not just the first sixteen.
    let mut state = seed ^ stream.rotate_left(32) ^ 0x6a09_e667_f3bc_c908;
    for chunk in key[16..].chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = Rng::new(7).derive("x");
        let mut b = Rng::new(7).derive("x");
        let va: Vec<f64> = a.normal_vec(16, 0.0, 1.0);
        let vb: Vec<f64> = b.normal_vec(16, 0.0, 1.0);
        assert_eq!(va, vb);
    }

    #[test]
    fn different_labels_different_draws() {
        let root = Rng::new(7);
        let va: Vec<f64> = root.derive("a").normal_vec(16, 0.0, 1.0);
        let vb: Vec<f64> = root.derive("b").normal_vec(16, 0.0, 1.0);
        assert_ne!(va, vb);
    }

    #[test]
    fn derive_is_order_independent() {
        let root = Rng::new(9);
        let first: Vec<f64> = root.derive("w").normal_vec(8, 0.0, 1.0);
        // Interleave a draw from another stream, then derive "w" again.
        let _: Vec<f64> = root.derive("other").normal_vec(1000, 0.0, 1.0);
        let second: Vec<f64> = root.derive("w").normal_vec(8, 0.0, 1.0);
        assert_eq!(first, second);
    }

    #[test]
    fn f32_draws_are_casts_of_f64_draws() {
        let root = Rng::new(3);
        let v64: Vec<f64> = root.derive("p").normal_vec(32, 0.0, 0.02);
        let v32: Vec<f32> = root.derive("p").normal_vec(32, 0.0, 0.02);
        for (a, b) in v64.iter().zip(&v32) {
            assert_eq!(*a as f32, *b);
        }
    }

    #[test]
    fn shuffle_is_deterministic() {
        let mut a = Rng::new(11).derive("order");
        let mut b = Rng::new(11).derive("order");
        let mut xs: Vec<u32> = (0..100).collect();
        let mut ys = xs.clone();
        a.shuffle(&mut xs);
        b.shuffle(&mut ys);
        assert_eq!(xs, ys);
        assert_ne!(xs, (0..100).collect::<Vec<u32>>(), "shuffle should permute");
    }
}
