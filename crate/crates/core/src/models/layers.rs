//! Layer handles and helpers shared by the three networks.

use std::path::Path;

use hdrtv_tensor::{init, Graph, NodeId, ParamId, ParamSet, Scalar, Tensor};
use rand::Rng;

use crate::colorpipe::quantize_value;
use crate::error::{param_err, Error, Result};
use crate::image::{EncodedImage, Gamut, Transfer};

/// Convolution whose weight and bias live in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// Kaiming-uniform weight, zero bias. `k` 3 pads by 1.
    pub fn create<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let (w, b) = init::conv_layer(out_ch, in_ch, k, rng);
        Conv {
            weight: params.push(format!("{name}.weight"), w),
            bias: params.push(format!("{name}.bias"), b),
            stride,
            padding: k / 2,
        }
    }

    pub fn find(params: &ParamSet, name: &str, stride: usize) -> Result<Self> {
        let weight = params.require(&format!("{name}.weight"))?;
        let bias = params.require(&format!("{name}.bias"))?;
        let [o, _, k, k2] = params.get(weight).shape();
        if k != k2 || params.get(bias).shape() != [o, 1, 1, 1] {
            return Err(param_err!("layer {name}: inconsistent weight/bias shapes"));
        }
        Ok(Conv {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    pub fn out_ch(&self, params: &ParamSet) -> usize {
        params.get(self.weight).shape()[0]
    }

    pub fn in_ch(&self, params: &ParamSet) -> usize {
        params.get(self.weight).shape()[1]
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, leaves: &[NodeId], x: NodeId) -> Result<NodeId> {
        Ok(g.conv2d(
            x,
            leaves[self.weight.0],
            leaves[self.bias.0],
            self.stride,
            self.padding,
        )?)
    }

    /// Fully connected use of a (out, in, 1, 1) weight on a (B, in, 1, 1) vector.
    pub fn dense<T: Scalar>(&self, g: &mut Graph<T>, leaves: &[NodeId], v: NodeId) -> Result<NodeId> {
        Ok(g.fully_connected(v, leaves[self.weight.0], leaves[self.bias.0])?)
    }
}

/// Names of the form `{prefix}.{i}.weight`, counted from 0 until one is missing.
pub fn count_indexed(params: &ParamSet, prefix: &str) -> usize {
    (0..)
        .take_while(|i| params.find(&format!("{prefix}.{i}.weight")).is_some())
        .count()
}

/// Reflect-pad the bottom/right edges so both dims become multiples of `m`.
pub fn reflect_pad(t: &Tensor<f32>, m: usize) -> Result<Tensor<f32>> {
    let [b, c, h, w] = t.shape();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    if ph - h >= h || pw - w >= w {
        return Err(param_err!("image {h}x{w} too small to reflect-pad to a multiple of {m}"));
    }
    let refl = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
    Ok(Tensor::from_fn([b, c, ph, pw], |[bi, ci, y, x]| {
        t.at([bi, ci, refl(y, h), refl(x, w)])
    }))
}

pub fn crop(t: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let [b, c, ..] = t.shape();
    if t.height() == h && t.width() == w {
        return t.clone();
    }
    Tensor::from_fn([b, c, h, w], |idx| t.at(idx))
}

/// Clamp to [0, 1] and round to 16-bit codes: the hand-off between stages.
pub fn stage_output(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        ((v as f64 * 65535.0).round() / 65535.0) as f32
    })
}

/// Extract sample `b` of a batch.
pub fn sample(t: &Tensor<f32>, b: usize) -> Tensor<f32> {
    t.sample(b)
}

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    crate::io_util::write_atomic(path, |w| {
        hdrtv_tensor::write_checkpoint(w, params).map_err(|e| match e {
            hdrtv_tensor::TensorError::Io(io) => Error::io(path, io),
            other => Error::Tensor(other),
        })
    })
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    hdrtv_tensor::read_checkpoint(std::io::BufReader::new(f)).map_err(|e| match e {
        hdrtv_tensor::TensorError::Io(io) => Error::io(path, io),
        hdrtv_tensor::TensorError::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => Error::Tensor(other),
    })
}

/// Each f64 is stored exactly as three integer-valued f32 chunks of at
/// most 22 bits, so metadata survives the f32 checkpoint format bitwise.
pub fn encode_meta(values: &[f64]) -> Vec<f32> {
    values
        .iter()
        .flat_map(|v| {
            let b = v.to_bits();
            [(b >> 42) as f32, ((b >> 21) & 0x1F_FFFF) as f32, (b & 0x1F_FFFF) as f32]
        })
        .collect()
}

fn decode_meta(raw: &[f32]) -> Option<Vec<f64>> {
    if raw.len() % 3 != 0 {
        return None;
    }
    raw.chunks(3)
        .map(|c| {
            if c.iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v > 4_194_303.0) {
                return None;
            }
            let [a, b, d] = [c[0] as u64, c[1] as u64, c[2] as u64];
            Some(f64::from_bits((a << 42) | (b << 21) | d))
        })
        .collect()
}

/// Metadata written by [`with_meta`], if present and well formed.
pub fn meta_values(params: &ParamSet, name: &str) -> Option<Vec<f64>> {
    params.find(name).and_then(|id| decode_meta(params.get(id).data()))
}

/// Copy of `params` without the named entries.
pub fn without(params: &ParamSet, names: &[&str]) -> ParamSet {
    let mut out = ParamSet::new();
    for (n, t) in params.iter() {
        if !names.contains(&n) {
            out.push(n, t.clone());
        }
    }
    out
}

/// Copy of `params` with extra metadata entries appended.
pub fn with_meta(params: &ParamSet, meta: &[(&str, Vec<f64>)]) -> ParamSet {
    let mut out = params.clone();
    for (name, v) in meta {
        let raw = encode_meta(v);
        out.push(*name, Tensor::from_vec([raw.len(), 1, 1, 1], raw).expect("vector shape"));
    }
    out
}

/// Stage output as a quantized 16-bit PQ/bt2020 image.
pub fn stage_image(t: &Tensor<f32>) -> Result<EncodedImage> {
    let y = stage_output(t);
    let [_, _, h, w] = y.shape();
    let hw = h * w;
    let d = y.data();
    let codes = (0..hw)
        .map(|i| [0, 1, 2].map(|c| quantize_value(d[c * hw + i] as f64, 16)))
        .collect();
    EncodedImage::new_quantized(w, h, Transfer::Pq, Gamut::Bt2020, 16, codes)
}
