//! Splittable, seedable random streams.
//!
//! A [`RandomStream`] is identified by a root seed and a path of split
//! indices. The key of the underlying generator is a hash of `(seed, path)`,
//! so the variates drawn from a stream never depend on the order in which
//! sibling streams are consumed or on how many threads consume them.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::normal::standard_normal_quantile;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn derive_key(parent: u64, index: u64) -> u64 {
    mix64(parent ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// A deterministic source of uniform and Gaussian variates.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
    key: u64,
    rng: Xoshiro256PlusPlus,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        let key = mix64(seed.wrapping_add(GOLDEN_GAMMA));
        Self {
            seed,
            path: Vec::new(),
            key,
            rng: Xoshiro256PlusPlus::seed_from_u64(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Returns the child stream at `index`. The child depends only on the
    /// parent's `(seed, path)`, not on how many variates the parent has
    /// already produced.
    pub fn split(&self, index: u64) -> Self {
        let key = derive_key(self.key, index);
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        Self {
            seed: self.seed,
            path,
            key,
            rng: Xoshiro256PlusPlus::seed_from_u64(key),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform variate on the open interval (0, 1), 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate by inversion of the uniform.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        standard_normal_quantile(self.uniform())
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_path_repeat() {
        let mut a = RandomStream::new(42).split(3).split(7);
        let mut b = RandomStream::new(42).split(3).split(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_ignores_parent_position() {
        let root = RandomStream::new(9);
        let mut advanced = root.clone();
        for _ in 0..17 {
            advanced.next_u64();
        }
        let mut c1 = root.split(5);
        let mut c2 = advanced.split(5);
        assert_eq!(c1.next_u64(), c2.next_u64());
        assert_eq!(c1.path(), &[5]);
    }

    #[test]
    fn distinct_splits_differ() {
        let root = RandomStream::new(1);
        let mut a = root.split(0);
        let mut b = root.split(1);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn sibling_streams_uncorrelated() {
        let root = RandomStream::new(2024);
        let n = 200_000;
        let mut a = root.split(10);
        let mut b = root.split(11);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.standard_normal();
            let y = b.standard_normal();
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let corr = sab / (saa * sbb).sqrt();
        // 4 standard errors of a null correlation
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr = {corr}");
    }

    #[test]
    fn uniform_in_open_interval() {
        let mut s = RandomStream::new(0);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
