use rand::Rng;
use tgn_seal_autograd::{Scalar, Tensor};

/// Uniform `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape matches data")
}
