use rand::Rng;

use super::{Real, Tensor};

/// Glorot/Xavier uniform initialization: entries drawn i.i.d. from
/// `U[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    assert!(fan_in >= 1 && fan_out >= 1, "fans must be positive");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, bound, rng)
}

/// Entries drawn i.i.d. from `U[-bound, bound]`.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("numel matches shape")
}
