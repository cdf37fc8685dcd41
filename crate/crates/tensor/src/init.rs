//! Weight initialization.

use rand::Rng;

use crate::tensor::{Shape, Tensor};

/// Kaiming-uniform over fan-in: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
///
/// `fan_in` is `in_ch · k · k` for a `(out, in, k, k)` weight.
pub fn kaiming_uniform<R: Rng>(shape: Shape, rng: &mut R) -> Tensor<f32> {
    let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-bound..bound) as f32)
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Conv or dense weight `(out, in, k, k)` plus zero bias `(out, 1, 1, 1)`.
pub fn conv_layer<R: Rng>(
    out_ch: usize,
    in_ch: usize,
    k: usize,
    rng: &mut R,
) -> (Tensor<f32>, Tensor<f32>) {
    (
        kaiming_uniform([out_ch, in_ch, k, k], rng),
        Tensor::zeros([out_ch, 1, 1, 1]),
    )
}
