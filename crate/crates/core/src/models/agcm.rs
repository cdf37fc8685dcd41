//! Adaptive global color mapping: a per-pixel 1×1 base network whose
//! features are scaled and shifted by projections of an image-level
//! condition vector.

use std::path::Path;

use hdrtv_tensor::{Graph, NodeId, ParamSet, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{count_indexed, load_params, meta_values, save_params, stage_image, stage_output, with_meta, without, Conv};
use super::train::{optimize, TrainConfig, TrainLog};
use crate::datagen::{condition_side, downsample_for_condition, PairedDataset};
use crate::error::{param_err, Result};
use crate::image::EncodedImage;
use crate::metrics::psnr_values;

const META: &str = "agcm.meta";
/// Pixels per inference chunk; bounds intermediate memory on large frames.
const CHUNK: usize = 1 << 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgcmConfig {
    /// Channel widths of the base network, input first: 3 → … → 3.
    pub base_widths: Vec<usize>,
    /// Number of color condition blocks; 0 drops the condition branch and
    /// the modulation, leaving the base network alone.
    pub cond_blocks: usize,
    pub cond_width: usize,
    pub cond_dim: usize,
    pub pool: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub norm_eps: f64,
    /// Side of the downsampled condition input used at inference.
    pub cond_size: usize,
}

impl Default for AgcmConfig {
    fn default() -> Self {
        AgcmConfig {
            base_widths: vec![3, 64, 64, 3],
            cond_blocks: 4,
            cond_width: 64,
            cond_dim: 32,
            pool: 2,
            leaky_slope: 0.1,
            dropout: 0.5,
            norm_eps: 1e-5,
            cond_size: 128,
        }
    }
}

impl AgcmConfig {
    pub fn base_only() -> Self {
        AgcmConfig {
            cond_blocks: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.base_widths;
        if w.len() < 3 || w[0] != 3 || w[w.len() - 1] != 3 || w.contains(&0) {
            return Err(param_err!("agcm: base widths {w:?} must run 3 → … → 3 with at least two layers"));
        }
        if self.cond_blocks > 0 && (self.cond_width == 0 || self.cond_dim == 0 || self.pool < 2) {
            return Err(param_err!("agcm: condition widths must be positive and pool at least 2"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(param_err!("agcm: leaky slope {} outside (0, 1)", self.leaky_slope));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(param_err!("agcm: dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.norm_eps > 0.0) {
            return Err(param_err!("agcm: normalization eps must be positive"));
        }
        Ok(())
    }

    /// Smallest condition-input side the pooling stack accepts.
    pub fn min_cond_side(&self) -> usize {
        2 * self.pool.pow(self.cond_blocks as u32)
    }
}

/// Weight initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgcmInit {
    /// Kaiming-uniform weights, zero biases.
    Kaiming,
    /// Kaiming-uniform hidden units plus three units wired as an identity
    /// path, with the output reading only that path, so the initial map
    /// is exactly the identity while every hidden unit can still learn.
    IdentityAdjacent,
}

/// Condition vector V for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionVector {
    pub values: Vec<f32>,
}

impl ConditionVector {
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([1, self.values.len(), 1, 1], self.values.clone()).expect("vector shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Gfm {
    scale: Conv,
    shift: Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agcm {
    pub config: AgcmConfig,
    pub params: ParamSet,
    base: Vec<Conv>,
    ccb: Vec<Conv>,
    cond_out: Option<Conv>,
    gfm: Vec<Gfm>,
}

fn set_identity_rows(t: &mut Tensor<f32>, n: usize) {
    let [o, i, ..] = t.shape();
    for r in 0..n.min(o) {
        for c in 0..i {
            t.set([r, c, 0, 0], if r == c { 1.0 } else { 0.0 });
        }
    }
}

impl Agcm {
    pub fn new(config: AgcmConfig, seed: u64, init: AgcmInit) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let w = &config.base_widths;
        let base: Vec<Conv> = (0..w.len() - 1)
            .map(|i| Conv::create(&mut params, &format!("agcm.base.{i}"), w[i + 1], w[i], 1, 1, &mut rng))
            .collect();
        let mut ccb = Vec::new();
        let mut cond_out = None;
        let mut gfm = Vec::new();
        if config.cond_blocks > 0 {
            let mut inc = 3;
            for i in 0..config.cond_blocks {
                let conv = Conv::create(&mut params, &format!("agcm.cond.ccb.{i}"), config.cond_width, inc, 1, 1, &mut rng);
                // Zero biases would make conv → pool → leaky → norm blind to
                // a global scaling of the input, i.e. to exposure.
                let bound = 1.0 / (inc as f32).sqrt();
                *params.get_mut(conv.bias) = Tensor::from_vec(
                    [config.cond_width, 1, 1, 1],
                    (0..config.cond_width).map(|_| rng.gen_range(-bound..bound)).collect(),
                )?;
                ccb.push(conv);
                inc = config.cond_width;
            }
            cond_out = Some(Conv::create(&mut params, "agcm.cond.out", config.cond_dim, inc, 1, 1, &mut rng));
            for (i, &c) in w[1..].iter().enumerate() {
                let scale = Conv::create(&mut params, &format!("agcm.gfm.{i}.scale"), c, config.cond_dim, 1, 1, &mut rng);
                let shift = Conv::create(&mut params, &format!("agcm.gfm.{i}.shift"), c, config.cond_dim, 1, 1, &mut rng);
                // Start as the plain base network: scale 1, shift 0.
                *params.get_mut(scale.weight) = Tensor::zeros([c, config.cond_dim, 1, 1]);
                *params.get_mut(scale.bias) = Tensor::full([c, 1, 1, 1], 1.0);
                *params.get_mut(shift.weight) = Tensor::zeros([c, config.cond_dim, 1, 1]);
                gfm.push(Gfm { scale, shift });
            }
        }
        let mut m = Agcm { config, params, base, ccb, cond_out, gfm };
        if init == AgcmInit::IdentityAdjacent {
            let last = m.base.len() - 1;
            for (i, layer) in m.base.clone().iter().enumerate() {
                let wt = m.params.get_mut(layer.weight);
                if i == last {
                    let [o, inc, ..] = wt.shape();
                    *wt = Tensor::zeros([o, inc, 1, 1]);
                }
                set_identity_rows(wt, 3);
            }
        }
        Ok(m)
    }

    /// Exact identity: embed, pass through, project back; modulation neutral.
    pub fn set_identity(&mut self) {
        for layer in self.base.clone() {
            let [o, i, ..] = self.params.get(layer.weight).shape();
            let mut t = Tensor::zeros([o, i, 1, 1]);
            set_identity_rows(&mut t, 3);
            *self.params.get_mut(layer.weight) = t;
            *self.params.get_mut(layer.bias) = Tensor::zeros([o, 1, 1, 1]);
        }
        self.set_neutral_modulation();
    }

    /// GFM projections emit scale 1 and shift 0 for every condition.
    pub fn set_neutral_modulation(&mut self) {
        for g in self.gfm.clone() {
            for (conv, b) in [(g.scale, 1.0), (g.shift, 0.0)] {
                let s = self.params.get(conv.weight).shape();
                *self.params.get_mut(conv.weight) = Tensor::zeros(s);
                let bs = self.params.get(conv.bias).shape();
                *self.params.get_mut(conv.bias) = Tensor::full(bs, b);
            }
        }
    }

    /// Rebuild from named arrays; widths and depth are read off the shapes.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let meta = meta_values(&params, META);
        let params = without(&params, &[META]);
        let n_base = count_indexed(&params, "agcm.base");
        if n_base < 2 {
            return Err(param_err!("checkpoint is not an AGCM model (no agcm.base layers)"));
        }
        let base = (0..n_base)
            .map(|i| Conv::find(&params, &format!("agcm.base.{i}"), 1))
            .collect::<Result<Vec<_>>>()?;
        let mut widths = vec![base[0].in_ch(&params)];
        for (i, l) in base.iter().enumerate() {
            if l.in_ch(&params) != widths[i] {
                return Err(param_err!("agcm.base.{i}: expects {} inputs, previous layer gives {}", l.in_ch(&params), widths[i]));
            }
            widths.push(l.out_ch(&params));
        }
        let n_ccb = count_indexed(&params, "agcm.cond.ccb");
        let ccb = (0..n_ccb)
            .map(|i| Conv::find(&params, &format!("agcm.cond.ccb.{i}"), 1))
            .collect::<Result<Vec<_>>>()?;
        let (cond_out, gfm) = if n_ccb > 0 {
            let out = Conv::find(&params, "agcm.cond.out", 1)?;
            let gfm = (0..n_base)
                .map(|i| {
                    Ok(Gfm {
                        scale: Conv::find(&params, &format!("agcm.gfm.{i}.scale"), 1)?,
                        shift: Conv::find(&params, &format!("agcm.gfm.{i}.shift"), 1)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (Some(out), gfm)
        } else {
            (None, Vec::new())
        };
        let defaults = AgcmConfig::default();
        let m = meta.unwrap_or_default();
        let get = |i: usize, d: f64| m.get(i).copied().unwrap_or(d);
        let config = AgcmConfig {
            base_widths: widths,
            cond_blocks: n_ccb,
            cond_width: ccb.first().map(|c| c.out_ch(&params)).unwrap_or(defaults.cond_width),
            cond_dim: cond_out.map(|c| c.out_ch(&params)).unwrap_or(defaults.cond_dim),
            pool: get(0, defaults.pool as f64) as usize,
            leaky_slope: get(1, defaults.leaky_slope),
            dropout: get(2, defaults.dropout),
            norm_eps: get(3, defaults.norm_eps),
            cond_size: get(4, defaults.cond_size as f64) as usize,
        };
        config.validate()?;
        Ok(Agcm { config, params, base, ccb, cond_out, gfm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = &self.config;
        let meta = vec![c.pool as f64, c.leaky_slope, c.dropout, c.norm_eps, c.cond_size as f64];
        save_params(&with_meta(&self.params, &[(META, meta)]), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(load_params(path)?)
    }

    pub fn has_condition(&self) -> bool {
        self.cond_out.is_some()
    }

    /// Trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Trainable scalars of the base network alone.
    pub fn count_base_params(&self) -> usize {
        self.base
            .iter()
            .map(|c| self.params.get(c.weight).len() + self.params.get(c.bias).len())
            .sum()
    }

    fn check_cond_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        let red = self.config.pool.pow(self.config.cond_blocks as u32);
        if c != 3 || h % red != 0 || w % red != 0 || (h / red) * (w / red) < 2 {
            return Err(param_err!(
                "condition input {h}x{w} does not fit {} pooling stages of {} (needs sides divisible by {red} and at least two cells left)",
                self.config.cond_blocks,
                self.config.pool
            ));
        }
        Ok(())
    }

    /// CCB stack (the last one without normalization) → dropout → 1×1 conv
    /// → global average pool: (B, C_v, 1, 1).
    pub fn condition_graph<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        leaves: &[NodeId],
        cond: NodeId,
        training: bool,
        seed: u64,
    ) -> Result<NodeId> {
        let out = self
            .cond_out
            .ok_or_else(|| param_err!("model has no condition network"))?;
        self.check_cond_input(g.shape(cond))?;
        let mut h = cond;
        let last = self.ccb.len() - 1;
        for (i, block) in self.ccb.iter().enumerate() {
            h = block.apply(g, leaves, h)?;
            h = g.avg_pool(h, self.config.pool, self.config.pool)?;
            h = g.leaky_relu(h, self.config.leaky_slope)?;
            // Normalizing the last block would zero every channel mean, and
            // the linear conv + average pool that follow would then emit
            // their bias whatever the input. The last block stays raw.
            if i < last {
                h = g.instance_norm(h, self.config.norm_eps)?;
            }
        }
        h = g.feature_dropout(h, self.config.dropout, training, seed)?;
        h = out.apply(g, leaves, h)?;
        Ok(g.global_avg_pool(h)?)
    }

    /// Base network with GFM after every conv when `v` is given.
    pub fn mapping_graph<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        leaves: &[NodeId],
        x: NodeId,
        v: Option<NodeId>,
    ) -> Result<NodeId> {
        if g.shape(x)[1] != self.config.base_widths[0] {
            return Err(param_err!("agcm: input has {} channels, expected 3", g.shape(x)[1]));
        }
        let last = self.base.len() - 1;
        let mut h = x;
        for (i, layer) in self.base.iter().enumerate() {
            h = layer.apply(g, leaves, h)?;
            if let Some(v) = v {
                let gfm = self.gfm.get(i).ok_or_else(|| param_err!("model has no modulation"))?;
                let a1 = gfm.scale.dense(g, leaves, v)?;
                let a2 = gfm.shift.dense(g, leaves, v)?;
                h = g.affine_modulate(h, a1, a2)?;
            }
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Full network. `cond` is required when the model has a condition branch.
    pub fn forward_graph<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        leaves: &[NodeId],
        x: NodeId,
        cond: Option<NodeId>,
        training: bool,
        seed: u64,
    ) -> Result<NodeId> {
        let v = match (self.has_condition(), cond) {
            (true, Some(c)) => Some(self.condition_graph(g, leaves, c, training, seed)?),
            (true, None) => return Err(param_err!("agcm: condition input required")),
            (false, _) => None,
        };
        self.mapping_graph(g, leaves, x, v)
    }

    /// Condition vectors of a (B, 3, S, S) batch. Dropout only acts when
    /// `training` is set.
    pub fn condition_vectors(&self, cond: &Tensor<f32>, training: bool, seed: u64) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let leaves = self.params.register(&mut g, false);
        let c = g.input(cond.clone());
        let v = self.condition_graph(&mut g, &leaves, c, training, seed)?;
        Ok(g.take_value(v))
    }

    /// Condition vector of an already downsampled SDR image.
    pub fn condition_forward(&self, img_ds: &EncodedImage, training: bool, seed: u64) -> Result<ConditionVector> {
        let v = self.condition_vectors(&img_ds.to_tensor(), training, seed)?;
        Ok(ConditionVector { values: v.into_vec() })
    }

    /// Downsample a full SDR frame to the configured condition side and
    /// compute its condition vector.
    pub fn condition_from_image(&self, sdr: &EncodedImage) -> Result<ConditionVector> {
        let side = condition_side(self.config.cond_size, sdr.width(), sdr.height())
            .filter(|&s| s >= self.config.min_cond_side())
            .ok_or_else(|| {
                param_err!(
                    "image {}x{} is too small for the condition network (needs {} pixels per side)",
                    sdr.width(),
                    sdr.height(),
                    self.config.min_cond_side()
                )
            })?;
        self.condition_forward(&downsample_for_condition(sdr, side)?, false, 0)
    }

    /// Per-pixel map of every sample of `x`. `v` holds one condition vector
    /// per sample or one shared by all; it is ignored by base-only models.
    /// Pixels are processed in chunks, which does not change any value.
    pub fn map_pixels(&self, x: &Tensor<f32>, v: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        let [b, c, h, w] = x.shape();
        if c != 3 {
            return Err(param_err!("agcm: input has {c} channels, expected 3"));
        }
        if self.has_condition() && v.is_none() {
            return Err(param_err!("agcm: condition vector required"));
        }
        let hw = h * w;
        let mut out = vec![0.0f32; x.len()];
        for bi in 0..b {
            let vb = match v {
                Some(t) if self.has_condition() => Some(t.sample(if t.batch() == 1 { 0 } else { bi })),
                _ => None,
            };
            let xs = &x.data()[bi * 3 * hw..(bi + 1) * 3 * hw];
            let mut start = 0;
            while start < hw {
                let n = CHUNK.min(hw - start);
                let mut chunk = Vec::with_capacity(3 * n);
                for ch in 0..3 {
                    chunk.extend_from_slice(&xs[ch * hw + start..ch * hw + start + n]);
                }
                let mut g = Graph::new();
                let leaves = self.params.register(&mut g, false);
                let xi = g.input(Tensor::from_vec([1, 3, 1, n], chunk)?);
                let vi = vb.as_ref().map(|t| g.input(t.clone()));
                let y = self.mapping_graph(&mut g, &leaves, xi, vi)?;
                let yv = g.value(y).data();
                for ch in 0..3 {
                    out[bi * 3 * hw + ch * hw + start..bi * 3 * hw + ch * hw + start + n]
                        .copy_from_slice(&yv[ch * n..(ch + 1) * n]);
                }
                start += n;
            }
        }
        Ok(Tensor::from_vec([b, 3, h, w], out)?)
    }

    /// Base network alone, ignoring any modulation. Unclamped.
    pub fn base_forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let plain = Agcm {
            config: AgcmConfig { cond_blocks: 0, ..self.config.clone() },
            params: self.params.clone(),
            base: self.base.clone(),
            ccb: Vec::new(),
            cond_out: None,
            gfm: Vec::new(),
        };
        plain.map_pixels(x, None)
    }

    /// SDR frame to HDR codes (unclamped network output).
    pub fn agcm_forward(&self, sdr: &EncodedImage) -> Result<Tensor<f32>> {
        let v = if self.has_condition() {
            Some(self.condition_from_image(sdr)?.to_tensor())
        } else {
            None
        };
        self.map_pixels(&sdr.to_tensor(), v.as_ref())
    }

    /// Exported stage output: clamped, 16-bit, PQ/bt2020.
    pub fn infer(&self, sdr: &EncodedImage) -> Result<EncodedImage> {
        stage_image(&self.agcm_forward(sdr)?)
    }

    /// Condition vectors of every source thumbnail in `ds`, indexed like
    /// `ds.patches` (inference mode).
    pub fn dataset_conditions(&self, ds: &PairedDataset) -> Result<Option<Vec<Tensor<f32>>>> {
        if !self.has_condition() {
            return Ok(None);
        }
        let mut cache: Vec<(u32, Tensor<f32>)> = Vec::new();
        let mut out = Vec::with_capacity(ds.len());
        for (i, p) in ds.patches.iter().enumerate() {
            let found = cache.iter().find(|(id, _)| *id == p.source_id).map(|(_, t)| t.clone());
            let v = match found {
                Some(v) if ds.source(p.source_id).is_some_and(|s| s.condition.is_some()) => v,
                _ => {
                    let v = self.condition_vectors(&ds.condition_tensor(&[i])?, false, 0)?;
                    cache.push((p.source_id, v.clone()));
                    v
                }
            };
            out.push(v);
        }
        Ok(Some(out))
    }

    /// Stage outputs (clamped, 16-bit) for every patch of `ds`.
    pub fn predict_dataset(&self, ds: &PairedDataset) -> Result<Tensor<f32>> {
        let conds = self.dataset_conditions(ds)?;
        let outs = (0..ds.len())
            .map(|i| {
                let x = ds.sdr_tensor(&[i]);
                let v = conds.as_ref().map(|c| &c[i]);
                self.map_pixels(&x, v).map(|y| stage_output(&y))
            })
            .collect::<Result<Vec<_>>>()?;
        if outs.is_empty() {
            return Err(param_err!("dataset is empty"));
        }
        Ok(Tensor::stack(&outs)?)
    }
}

/// Mean per-patch PSNR of `pred` against the HDR side of `ds`.
pub fn mean_patch_psnr(pred: &Tensor<f32>, ds: &PairedDataset) -> f64 {
    let per = 3 * ds.patch_size * ds.patch_size;
    let n = ds.len();
    let mut total = 0.0;
    for i in 0..n {
        let target = ds.hdr_tensor(&[i]);
        let p: Vec<f64> = pred.data()[i * per..(i + 1) * per].iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
        total += psnr_values(&p, &t);
    }
    total / n.max(1) as f64
}

/// Adam on mse(agcm(sdr), hdr). Validation PSNR uses clamped, 16-bit
/// stage outputs on `val`.
pub fn train_agcm(
    mut model: Agcm,
    data: &PairedDataset,
    val: Option<&PairedDataset>,
    config: &TrainConfig,
) -> Result<(Agcm, TrainLog)> {
    if data.is_empty() {
        return Err(param_err!("train_agcm: dataset is empty"));
    }
    // Thumbnails are fixed per source, so their tensors are built once.
    let conds: Option<Vec<Tensor<f32>>> = if model.has_condition() {
        Some(
            (0..data.len())
                .map(|i| data.condition_tensor(&[i]))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let layout = model.clone();
    let seed = config.seed;
    let mut params = std::mem::take(&mut model.params);
    let log = optimize(
        &mut params,
        data.len(),
        config,
        |g, leaves, idx, step| {
            let x = g.input(data.sdr_tensor(idx));
            let y = g.input(data.hdr_tensor(idx));
            let c = match &conds {
                Some(cs) => {
                    let items: Vec<Tensor<f32>> = idx.iter().map(|&i| cs[i].clone()).collect();
                    Some(g.input(Tensor::stack(&items)?))
                }
                None => None,
            };
            let drop_seed = seed.wrapping_mul(0x9E37_79B9).wrapping_add(step as u64);
            let pred = layout.forward_graph(g, leaves, x, c, true, drop_seed)?;
            Ok(g.mse_loss(pred, y)?)
        },
        |p| match val {
            Some(v) if !v.is_empty() => {
                let m = Agcm { params: p.clone(), ..layout.clone() };
                Ok(Some(mean_patch_psnr(&m.predict_dataset(v)?, v)))
            }
            _ => Ok(None),
        },
    )?;
    model.params = params;
    Ok((model, log))
}
