//! Seeded random streams.
//!
//! Every stochastic choice in the crate (initialization, dropout masks, edge
//! and node dropping, LADIES sampling, synthetic graphs) draws from an [`Rng`].
//! The generator is the xorshift128 `XorShiftRng`; its 128-bit state is filled
//! from a `u64` seed by the PCG32 expansion of `SeedableRng::seed_from_u64`.
//! Both steps are pure integer arithmetic, so streams are identical on every
//! platform.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xorshift::XorShiftRng;

/// Named substream families, so that e.g. initialization and dropout never
/// share draws even when they share a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    FeatureDropout = 2,
    GraphDrop = 3,
    Smoothness = 4,
    Synthetic = 5,
    Split = 6,
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: XorShiftRng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: XorShiftRng::seed_from_u64(seed),
        }
    }

    /// Independent stream addressed by `seed` and a path of indices,
    /// e.g. `(seed, [GraphDrop, epoch, layer])`.
    pub fn substream(seed: u64, family: Stream, path: &[u64]) -> Self {
        let mut h = splitmix64(seed ^ splitmix64(family as u64));
        for &p in path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0x5851_f42d_4c95_7f2d)));
        }
        Self::new(h)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn shuffle<U>(&mut self, items: &mut [U]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
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
