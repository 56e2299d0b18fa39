//! Seeded randomness and hashing.
//!
//! Every random draw in the crate comes from a ChaCha stream derived from one
//! run seed plus a named substream, so changing how one component consumes
//! randomness never shifts another component's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// FNV-1a, 64 bit.
#[derive(Clone, Debug)]
pub struct Fnv64(u64);

impl Fnv64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Self(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = Fnv64::new();
    h.write(bytes);
    h.finish()
}

/// RNG for `seed` on the substream identified by `name`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv64(name.as_bytes()));
    rng
}

/// Like [`substream`] with an extra index, e.g. per epoch or per layer.
pub fn indexed_substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut h = Fnv64::new();
    h.write(name.as_bytes());
    h.write_u64(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h.finish());
    rng
}

/// One standard normal draw (Box-Muller with `libm`, so the bits do not
/// depend on the platform math library).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Tensor of independent zero-mean normal draws with deviation `std`.
pub fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f32) -> Tensor {
    Tensor::from_fn(shape, |_| (standard_normal(rng) * std as f64) as f32)
}

/// He-normal initialisation for a weight with `fan_in` inputs per output.
pub fn he_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    normal_tensor(rng, shape, libm::sqrtf(2.0 / fan_in as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_and_repeat() {
        let a: u64 = substream(7, "init").random();
        let b: u64 = substream(7, "init").random();
        let c: u64 = substream(7, "batch").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fnv_known_value() {
        // FNV-1a("a")
        assert_eq!(fnv64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = substream(3, "normal");
        let n = 200_000;
        let draws: alloc::vec::Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let tail = draws.iter().filter(|x| x.abs() > 1.96).count() as f64 / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
        assert!((tail - 0.05).abs() < 0.003, "{tail}");
        assert!(draws.iter().all(|x| x.is_finite()));
    }
}
