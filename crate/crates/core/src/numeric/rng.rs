use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Explicit-state PRNG. There is no global generator anywhere in the crate:
/// every stochastic operation takes one of these.
///
/// Independent sub-streams are obtained with [`SeededRng::derive`], which mixes
/// a text label into the seed, so adding a new consumer never shifts the draws
/// of an existing one.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sub-stream keyed by `label`; depends only on this generator's seed,
    /// not on how many values it has produced.
    pub fn derive(&self, label: &str) -> Self {
        Self::new(splitmix64(self.seed ^ fnv1a(label.as_bytes())))
    }

    /// Sub-stream keyed by an index, e.g. a task number or iteration.
    pub fn derive_index(&self, label: &str, index: u64) -> Self {
        Self::new(splitmix64(
            self.seed ^ fnv1a(label.as_bytes()) ^ splitmix64(index.wrapping_add(0x9E37_79B9)),
        ))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn derivation_ignores_consumption() {
        let master = SeededRng::new(7);
        let mut used = master.clone();
        for _ in 0..10 {
            used.next_u64();
        }
        assert_eq!(master.derive("x").next_u64(), used.derive("x").next_u64());
    }

    #[test]
    fn derived_streams_never_coincide() {
        let master = SeededRng::new(2024);
        let mut a = master.derive("suite");
        let mut b = master.derive("rollouts");
        let collisions = (0..1_000_000).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(collisions, 0);
    }

    #[test]
    fn uniform_range_stays_in_bounds() {
        let mut r = SeededRng::new(1);
        for _ in 0..10_000 {
            let x = r.uniform_range(-2.0, 3.0);
            assert!((-2.0..3.0).contains(&x));
            assert!(r.below(5) < 5);
        }
    }
}
