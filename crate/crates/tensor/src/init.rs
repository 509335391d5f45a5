//! Weight initialization.

use rand_core::RngCore;

use crate::tensor::Tensor;

/// Standard normal sample by Box-Muller over two 53-bit uniforms.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Zero-mean Gaussian tensor with the given standard deviation.
pub fn gaussian(shape: &[usize], std: f64, rng: &mut impl RngCore) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| (standard_normal(rng) * std) as f32)
}

/// `sqrt(2 / fan_in)`, for layers followed by a ReLU.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// `sqrt(1 / fan_in)`, for linear or sigmoid outputs.
pub fn lecun_std(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}
