#![allow(dead_code)]

use hdrtv_tensor::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Tensor whose entries stay at least `margin` away from zero.
pub fn rand_away_from_zero(shape: [usize; 4], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.gen_range(margin..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Builds a scalar loss from a list of leaf tensors.
pub type Builder<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId + 'a;

fn eval(leaves: &[Tensor<f64>], build: &Builder<'_>) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<_> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.value(loss).data()[0]
}

/// Max relative error between analytic and central-difference gradients
/// over every element of every leaf.
pub fn max_rel_error(leaves: &[Tensor<f64>], build: &Builder<'_>, h: f64) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<_> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(leaves)
        .map(|(&id, t)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut worst = 0.0f64;
    for li in 0..leaves.len() {
        for e in 0..leaves[li].len() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[e] += h;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[e] -= h;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * h);
            let a = analytic[li].data()[e];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
