//! Highlight generation: an encoder-decoder generator whose output is
//! added to the input under an over-exposure mask.

use std::path::Path;

use hdrtv_tensor::{Graph, NodeId, ParamSet, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agcm::{mean_patch_psnr, Agcm};
use super::layers::{crop, load_params, meta_values, reflect_pad, save_params, stage_image, stage_output, with_meta, without, Conv};
use super::le::Le;
use super::train::{optimize, TrainConfig, TrainLog};
use crate::datagen::PairedDataset;
use crate::error::{param_err, Result};
use crate::image::EncodedImage;

const META: &str = "hg.meta";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgConfig {
    /// Number of down and up stages.
    pub depth: usize,
    /// Channels at full resolution; doubled by every down stage.
    pub width: usize,
    /// Over-exposure threshold of the mask.
    pub gamma_mask: f64,
}

impl Default for HgConfig {
    fn default() -> Self {
        HgConfig { depth: 2, width: 16, gamma_mask: 0.95 }
    }
}

impl HgConfig {
    pub fn full_scale() -> Self {
        HgConfig { depth: 5, width: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(param_err!("hg: depth and width must be positive"));
        }
        check_gamma(self.gamma_mask)
    }

    fn widths(&self) -> Vec<usize> {
        (0..=self.depth).map(|i| self.width << i).collect()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(param_err!("hg: mask threshold {gamma} outside (0, 1)"))
    }
}

/// max(v − γ, 0) / (1 − γ).
pub fn mask_value(v: f64, gamma: f64) -> f64 {
    (v - gamma).max(0.0) / (1.0 - gamma)
}

/// Per-pixel, per-channel over-exposure mask of a (B, 3, H, W) tensor.
/// The threshold is rounded to f32 like the values it is compared with,
/// so a value equal to γ still maps to exactly 0.
pub fn mask_tensor(x: &Tensor<f32>, gamma: f64) -> Result<Tensor<f32>> {
    check_gamma(gamma)?;
    let g = gamma as f32 as f64;
    Ok(x.map(|v| mask_value(v as f64, g) as f32))
}

/// Mask of an image, evaluated on its f64 codes; planar (1, 3, H, W).
pub fn highlight_mask(img: &EncodedImage, gamma: f64) -> Result<Tensor<f32>> {
    check_gamma(gamma)?;
    let (w, h) = (img.width(), img.height());
    Ok(Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| mask_value(img.code(x, y)[c], gamma) as f32))
}

/// mask ⊙ gen + base, unclamped.
pub fn hg_compose(base: &Tensor<f32>, gen: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>> {
    if base.shape() != gen.shape() || base.shape() != mask.shape() {
        return Err(param_err!(
            "hg_compose: shapes {:?}, {:?} and {:?} differ",
            base.shape(),
            gen.shape(),
            mask.shape()
        ));
    }
    let data = base
        .data()
        .iter()
        .zip(gen.data())
        .zip(mask.data())
        .map(|((&b, &g), &m)| m * g + b)
        .collect();
    Ok(Tensor::from_vec(base.shape(), data)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hg {
    pub config: HgConfig,
    pub params: ParamSet,
    input: Conv,
    down: Vec<Conv>,
    up: Vec<Conv>,
    fuse: Vec<Conv>,
    output: Conv,
}

impl Hg {
    /// Kaiming-uniform weights; the output conv starts at zero so the
    /// untrained model returns its input.
    pub fn new(config: HgConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let input = Conv::create(&mut params, "hg.in", w[0], 3, 3, 1, &mut rng);
        let down = (0..config.depth)
            .map(|i| Conv::create(&mut params, &format!("hg.down.{i}"), w[i + 1], w[i], 3, 2, &mut rng))
            .collect();
        let up = (0..config.depth)
            .map(|i| Conv::create(&mut params, &format!("hg.up.{i}"), 4 * w[i], w[i + 1], 3, 1, &mut rng))
            .collect();
        let fuse = (0..config.depth)
            .map(|i| Conv::create(&mut params, &format!("hg.fuse.{i}"), w[i], 2 * w[i], 3, 1, &mut rng))
            .collect();
        let output = Conv::create(&mut params, "hg.out", 3, w[0], 3, 1, &mut rng);
        *params.get_mut(output.weight) = Tensor::zeros([3, w[0], 3, 3]);
        Ok(Hg { config, params, input, down, up, fuse, output })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let gamma = meta_values(&params, META)
            .and_then(|v| v.first().copied())
            .unwrap_or(HgConfig::default().gamma_mask);
        let params = without(&params, &[META]);
        let input = Conv::find(&params, "hg.in", 1)
            .map_err(|_| param_err!("checkpoint is not an HG model (no hg.in layer)"))?;
        let depth = (0..)
            .take_while(|i| params.find(&format!("hg.down.{i}.weight")).is_some())
            .count();
        let layers = |kind: &str, stride| {
            (0..depth)
                .map(|i| Conv::find(&params, &format!("hg.{kind}.{i}"), stride))
                .collect::<Result<Vec<_>>>()
        };
        let down = layers("down", 2)?;
        let up = layers("up", 1)?;
        let fuse = layers("fuse", 1)?;
        let output = Conv::find(&params, "hg.out", 1)?;
        let config = HgConfig { depth, width: input.out_ch(&params), gamma_mask: gamma };
        config.validate()?;
        let w = config.widths();
        let mut ok = input.in_ch(&params) == 3 && output.in_ch(&params) == w[0] && output.out_ch(&params) == 3;
        for i in 0..depth {
            ok &= (down[i].in_ch(&params), down[i].out_ch(&params)) == (w[i], w[i + 1])
                && (up[i].in_ch(&params), up[i].out_ch(&params)) == (w[i + 1], 4 * w[i])
                && (fuse[i].in_ch(&params), fuse[i].out_ch(&params)) == (2 * w[i], w[i]);
        }
        if !ok {
            return Err(param_err!("hg: layer widths are inconsistent"));
        }
        Ok(Hg { config, params, input, down, up, fuse, output })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(&with_meta(&self.params, &[(META, vec![self.config.gamma_mask])]), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(load_params(path)?)
    }

    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Side multiple the generator needs.
    pub fn alignment(&self) -> usize {
        1 << self.config.depth
    }

    /// Generator G on input whose sides are multiples of [`Hg::alignment`].
    pub fn generator_graph<T: Scalar>(&self, g: &mut Graph<T>, leaves: &[NodeId], x: NodeId) -> Result<NodeId> {
        let [_, c, h, w] = g.shape(x);
        let a = self.alignment();
        if c != 3 || h % a != 0 || w % a != 0 {
            return Err(param_err!("hg: input must have 3 channels and sides divisible by {a}, got {c}x{h}x{w}"));
        }
        let e0 = self.input.apply(g, leaves, x)?;
        let mut skips = vec![g.relu(e0)?];
        for d in &self.down {
            let prev = *skips.last().expect("non-empty");
            let h = d.apply(g, leaves, prev)?;
            skips.push(g.relu(h)?);
        }
        let mut f = skips.pop().expect("deepest stage");
        for i in (0..self.config.depth).rev() {
            let u = self.up[i].apply(g, leaves, f)?;
            let u = g.pixel_shuffle(u, 2)?;
            let u = g.relu(u)?;
            let cat = g.concat(u, skips[i])?;
            let cat = g.relu(cat)?;
            let h = self.fuse[i].apply(g, leaves, cat)?;
            f = g.relu(h)?;
        }
        self.output.apply(g, leaves, f)
    }

    /// Generator output for any input of at least alignment/2 per side.
    pub fn generator_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [_, _, h, w] = x.shape();
        let padded = reflect_pad(x, self.alignment())?;
        let mut g = Graph::new();
        let leaves = self.params.register(&mut g, false);
        let xi = g.input(padded);
        let y = self.generator_graph(&mut g, &leaves, xi)?;
        Ok(crop(&g.take_value(y), h, w))
    }

    /// mask ⊙ G(x) + x, unclamped.
    pub fn forward_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let gen = self.generator_tensor(x)?;
        hg_compose(x, &gen, &mask_tensor(x, self.config.gamma_mask)?)
    }

    /// Exported stage output: clamped, 16-bit, PQ/bt2020.
    pub fn hg_forward(&self, img: &EncodedImage) -> Result<EncodedImage> {
        stage_image(&self.forward_tensor(&img.to_tensor())?)
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let outs = (0..x.batch())
            .map(|b| self.forward_tensor(&x.sample(b)).map(|y| stage_output(&y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&outs)?)
    }
}

/// Stage outputs of AGCM, then LE when given, for every patch of `ds`.
pub fn upstream_outputs(agcm: &Agcm, le: Option<&Le>, ds: &PairedDataset) -> Result<Tensor<f32>> {
    let a = agcm.predict_dataset(ds)?;
    match le {
        Some(le) => le.predict(&a),
        None => Ok(a),
    }
}

/// Mean |pred − target| over the elements where the mask of `input` is
/// positive; `None` when the mask is empty everywhere.
pub fn masked_l1(input: &Tensor<f32>, pred: &Tensor<f32>, target: &Tensor<f32>, gamma: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&i, &p), &t) in input.data().iter().zip(pred.data()).zip(target.data()) {
        if mask_value(i as f64, gamma) > 0.0 {
            sum += (p as f64 - t as f64).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Adam on α·L1(mask ⊙ G(I) + I, hdr) where I is the frozen upstream
/// output.
pub fn train_hg(
    mut model: Hg,
    upstream: (&Agcm, Option<&Le>),
    data: &PairedDataset,
    val: Option<&PairedDataset>,
    config: &TrainConfig,
    alpha: f64,
) -> Result<(Hg, TrainLog)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(param_err!("train_hg: loss weight {alpha} must be positive"));
    }
    if data.is_empty() {
        return Err(param_err!("train_hg: dataset is empty"));
    }
    let inputs = upstream_outputs(upstream.0, upstream.1, data)?;
    let masks = mask_tensor(&inputs, model.config.gamma_mask)?;
    let val_inputs = match val {
        Some(v) if !v.is_empty() => Some((v, upstream_outputs(upstream.0, upstream.1, v)?)),
        _ => None,
    };
    let layout = model.clone();
    let mut params = std::mem::take(&mut model.params);
    let log = optimize(
        &mut params,
        data.len(),
        config,
        |g, leaves, idx, _| {
            let pick = |t: &Tensor<f32>| Tensor::stack(&idx.iter().map(|&i| t.sample(i)).collect::<Vec<_>>());
            let x = g.input(pick(&inputs)?);
            let m = g.input(pick(&masks)?);
            let y = g.input(data.hdr_tensor(idx));
            let gen = layout.generator_graph(g, leaves, x)?;
            let masked = g.mul(m, gen)?;
            let out = g.add(masked, x)?;
            let l1 = g.l1_loss(out, y)?;
            Ok(g.scale(l1, alpha)?)
        },
        |p| match &val_inputs {
            Some((v, vx)) => {
                let m = Hg { params: p.clone(), ..layout.clone() };
                Ok(Some(mean_patch_psnr(&m.predict(vx)?, v)))
            }
            None => Ok(None),
        },
    )?;
    model.params = params;
    Ok((model, log))
}
