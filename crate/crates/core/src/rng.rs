use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Deterministic random stream. The same seed yields the same sequence on
/// every platform; all derived draws (uniform, normal, shuffles) are built
/// here from raw 64-bit words.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`, rejection-sampled to avoid modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Standard normal draw via Box–Muller; the second variate of each pair
    /// is kept for the next call.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// `n` pseudo-normal draws with the given mean and standard deviation.
pub fn rng_normal<T: Real>(rng: &mut SeededRng, n: usize, mean: f64, stddev: f64) -> Result<Tensor<T>> {
    if !(stddev >= 0.0) {
        return Err(Error::invalid(
            "rng_normal",
            format!("stddev must be nonnegative, got {stddev}"),
        ));
    }
    let data = (0..n)
        .map(|_| T::of(mean + stddev * rng.standard_normal()))
        .collect();
    Tensor::new([n], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_stddev_is_constant() {
        let mut rng = SeededRng::new(1);
        let t = rng_normal::<f64>(&mut rng, 17, 2.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn negative_stddev_rejected() {
        let mut rng = SeededRng::new(1);
        assert!(rng_normal::<f64>(&mut rng, 3, 0.0, -1.0).is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let a = rng_normal::<f64>(&mut SeededRng::new(9), 100, 0.0, 1.0).unwrap();
        let b = rng_normal::<f64>(&mut SeededRng::new(9), 100, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        let c = rng_normal::<f64>(&mut SeededRng::new(10), 100, 0.0, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments() {
        let t = rng_normal::<f64>(&mut SeededRng::new(42), 100_000, 0.0, 1.0).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "stddev {}", var.sqrt());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = SeededRng::new(3);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SeededRng::new(5);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
