use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{c, Real, Tensor};

/// Counter-based generator: ChaCha8 keyed by a 64-bit seed, with independent
/// streams addressed by a 64-bit stream id.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// A generator for sub-task `stream` of `seed`; streams never overlap.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    /// Hash-combines several identifiers into one stream id.
    pub fn for_keys(seed: u64, keys: &[u64]) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for k in keys {
            for b in k.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        Self::stream(seed, h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// i.i.d. standard normal tensor.
pub fn sample_normal<F: Real>(rng: &mut SeededRng, shape: &[usize]) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| c::<F>(rng.normal())).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = sample_normal(&mut SeededRng::new(7), &[4, 5]);
        let b: Tensor<f32> = sample_normal(&mut SeededRng::new(7), &[4, 5]);
        assert_eq!(a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn different_seeds_differ() {
        let a: Tensor<f64> = sample_normal(&mut SeededRng::new(1), &[16]);
        let b: Tensor<f64> = sample_normal(&mut SeededRng::new(2), &[16]);
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn moments_of_a_million_draws() {
        let t: Tensor<f64> = sample_normal(&mut SeededRng::new(42), &[1_000_000]);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let mut a = SeededRng::stream(3, 0);
        let mut b = SeededRng::stream(3, 1);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut a2 = SeededRng::stream(3, 0);
        let mut a3 = SeededRng::stream(3, 0);
        assert_eq!(a2.next_u64(), a3.next_u64());
    }
}
