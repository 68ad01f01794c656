use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A deterministic random stream backed by ChaCha8.
///
/// The generator is pinned so that equal seeds produce bit-identical draw
/// sequences on every platform. Streams are single-owner; concurrent work
/// takes [`RngStream::split`] children instead of sharing one stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

// SplitMix64 finalizer, used to derive child keys.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream. The child depends only on this
    /// stream's seed and `index`, never on how many draws the parent made.
    pub fn split(&self, index: u64) -> RngStream {
        let key = mix64(self.seed ^ mix64(index.wrapping_add(0xA076_1D64_78BD_642F)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        RngStream { seed: key, rng }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw on `(0, 1]`, safe to take logarithms of.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_equal_sequences() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..1000 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn split_ignores_parent_progress() {
        let parent = RngStream::new(9);
        let mut advanced = parent.clone();
        for _ in 0..17 {
            advanced.uniform();
        }
        let mut c1 = parent.split(3);
        let mut c2 = advanced.split(3);
        assert_eq!(c1.next_u64(), c2.next_u64());
    }

    #[test]
    fn distinct_splits_differ() {
        let parent = RngStream::new(1);
        let a: Vec<u64> = {
            let mut s = parent.split(0);
            (0..8).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = parent.split(1);
            (0..8).map(|_| s.next_u64()).collect()
        };
        assert_ne!(a, b);
    }

    #[test]
    fn split_streams_are_uncorrelated() {
        let parent = RngStream::new(123);
        let mut a = parent.split(10);
        let mut b = parent.split(11);
        let n = 20_000;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.standard_normal();
            let y = b.standard_normal();
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() < 0.03, "corr = {corr}");
    }
}
