use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::scalar::Scalar;
use super::tensor::Tensor;

const DERIVE_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(DERIVE_MIX);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded, platform-stable random stream.
///
/// The uniform source is ChaCha8 keyed from a 64-bit seed; normal deviates come
/// from the Box–Muller transform on that stream. Identical seed and call
/// sequence give identical outputs. `derive` produces statistically independent
/// child streams from (seed, domain, index), so per-sample or per-iteration
/// randomness does not depend on scheduling order.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream addressed by (domain, index).
    pub fn derive(&self, domain: u64, index: u64) -> RandomSource {
        let child = splitmix64(self.seed ^ splitmix64(domain ^ splitmix64(index)));
        RandomSource::new(child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased-enough draw from 0..n via 128-bit widening multiply.
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_usize needs n > 0");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    fn box_muller_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_f64();
        let u2 = self.uniform_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// One standard-normal deviate (consumes a full Box–Muller pair).
    pub fn standard_normal(&mut self) -> f64 {
        self.box_muller_pair().0
    }

    pub fn fill_standard_normal<T: Scalar>(&mut self, out: &mut [T]) {
        let mut i = 0;
        while i < out.len() {
            let (z0, z1) = self.box_muller_pair();
            out[i] = T::of_f64(z0);
            if i + 1 < out.len() {
                out[i + 1] = T::of_f64(z1);
            }
            i += 2;
        }
    }

    /// Tensor of i.i.d. standard-normal entries.
    pub fn gaussian<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let mut t = Tensor::zeros(shape);
        self.fill_standard_normal(t.data_mut());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RandomSource::new(7);
        let mut b = RandomSource::new(7);
        let ta: Tensor<f32> = a.gaussian(&[64]);
        let tb: Tensor<f32> = b.gaussian(&[64]);
        assert_eq!(ta.to_bytes(), tb.to_bytes());
    }

    #[test]
    fn derived_streams_differ() {
        let root = RandomSource::new(7);
        let a: Tensor<f64> = root.derive(1, 0).gaussian(&[16]);
        let b: Tensor<f64> = root.derive(1, 1).gaussian(&[16]);
        let c: Tensor<f64> = root.derive(2, 0).gaussian(&[16]);
        assert_ne!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        // re-deriving the same address reproduces the stream
        let a2: Tensor<f64> = root.derive(1, 0).gaussian(&[16]);
        assert_eq!(a.data(), a2.data());
    }

    #[test]
    fn gaussian_moments_one_million() {
        let mut rs = RandomSource::new(123);
        let n = 1_000_000usize;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        let mut buf = vec![0.0f64; 4096];
        let mut left = n;
        while left > 0 {
            let take = left.min(buf.len());
            rs.fill_standard_normal(&mut buf[..take]);
            for &z in &buf[..take] {
                sum += z;
                sumsq += z * z;
            }
            left -= take;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn gaussian_kolmogorov_smirnov() {
        use statrs::function::erf::erf;
        let phi = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));

        let mut rs = RandomSource::new(99);
        let n = 100_000usize;
        let mut xs = vec![0.0f64; n];
        rs.fill_standard_normal(&mut xs);
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = phi(x);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((f - lo).abs()).max((hi - f).abs());
        }
        // 1% critical value, asymptotic: 1.62762 / sqrt(n) = 0.00514699
        assert!(d < 0.005147, "KS statistic {d}");
    }

    #[test]
    fn uniform_usize_in_range() {
        let mut rs = RandomSource::new(5);
        for _ in 0..1000 {
            assert!(rs.uniform_usize(7) < 7);
        }
    }
}
