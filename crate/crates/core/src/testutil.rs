//! Deterministic helpers shared by unit tests.

use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, Shape};

/// Small linear congruential generator; tests only need reproducibility.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f64() as f32
    }
}

pub fn random_tensor<T: Scalar>(rng: &mut Lcg, shape: Shape) -> ImageTensor<T> {
    ImageTensor::from_fn(shape, |_, _, _| T::from_f64(rng.next_f64() * 2.0 - 1.0))
}
