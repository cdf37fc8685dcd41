//! Local enhancement: stride-2 head, residual blocks, pixel-shuffle
//! upsampling and two output convolutions.

use std::path::Path;

use hdrtv_tensor::{Graph, NodeId, ParamSet, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agcm::{mean_patch_psnr, Agcm};
use super::layers::{count_indexed, crop, load_params, reflect_pad, save_params, stage_image, stage_output, Conv};
use super::train::{optimize, TrainConfig, TrainLog};
use crate::datagen::PairedDataset;
use crate::error::{param_err, Result};
use crate::image::EncodedImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeConfig {
    pub channels: usize,
    pub blocks: usize,
}

impl Default for LeConfig {
    fn default() -> Self {
        LeConfig { channels: 32, blocks: 4 }
    }
}

impl LeConfig {
    pub fn full_scale() -> Self {
        LeConfig { channels: 64, blocks: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(param_err!("le: at least one residual block is required"));
        }
        // The identity start packs 2×2 neighbourhoods of 3 channels into 12.
        if self.channels < 12 {
            return Err(param_err!("le: {} channels is below the minimum of 12", self.channels));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Le {
    pub config: LeConfig,
    pub params: ParamSet,
    head: Conv,
    blocks: Vec<(Conv, Conv)>,
    up: Conv,
    tail0: Conv,
    tail1: Conv,
}

fn centre_identity(t: &mut Tensor<f32>, rows: usize) {
    let [o, i, k, _] = t.shape();
    let c = k / 2;
    for r in 0..rows.min(o) {
        for ci in 0..i {
            for y in 0..k {
                for x in 0..k {
                    t.set([r, ci, y, x], 0.0);
                }
            }
        }
        t.set([r, r, c, c], 1.0);
    }
}

impl Le {
    /// Random weights arranged so the initial network is the identity:
    /// the head packs each 2×2 neighbourhood into channels 0..12, the
    /// residual branches start at zero, the upsampling conv unpacks those
    /// channels and the tails pass channels 0..3 straight through.
    pub fn new(config: LeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let head = Conv::create(&mut params, "le.head", c, 3, 3, 2, &mut rng);
        let blocks: Vec<(Conv, Conv)> = (0..config.blocks)
            .map(|i| {
                (
                    Conv::create(&mut params, &format!("le.rb.{i}.conv1"), c, c, 3, 1, &mut rng),
                    Conv::create(&mut params, &format!("le.rb.{i}.conv2"), c, c, 3, 1, &mut rng),
                )
            })
            .collect();
        let up = Conv::create(&mut params, "le.up", 4 * c, c, 3, 1, &mut rng);
        let tail0 = Conv::create(&mut params, "le.tail.0", c, c, 3, 1, &mut rng);
        let tail1 = Conv::create(&mut params, "le.tail.1", 3, c, 3, 1, &mut rng);

        let h = params.get_mut(head.weight);
        for ch in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    let r = ch * 4 + i * 2 + j;
                    for ci in 0..3 {
                        for y in 0..3 {
                            for x in 0..3 {
                                h.set([r, ci, y, x], 0.0);
                            }
                        }
                    }
                    h.set([r, ch, 1 + i, 1 + j], 1.0);
                }
            }
        }
        for (_, conv2) in &blocks {
            let s = params.get(conv2.weight).shape();
            *params.get_mut(conv2.weight) = Tensor::zeros(s);
        }
        centre_identity(params.get_mut(up.weight), 12);
        centre_identity(params.get_mut(tail0.weight), 3);
        centre_identity(params.get_mut(tail1.weight), 3);
        Ok(Le { config, params, head, blocks, up, tail0, tail1 })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let head = Conv::find(&params, "le.head", 2)
            .map_err(|_| param_err!("checkpoint is not an LE model (no le.head layer)"))?;
        let n = (0..)
            .take_while(|i| params.find(&format!("le.rb.{i}.conv1.weight")).is_some())
            .count();
        let blocks = (0..n)
            .map(|i| {
                Ok((
                    Conv::find(&params, &format!("le.rb.{i}.conv1"), 1)?,
                    Conv::find(&params, &format!("le.rb.{i}.conv2"), 1)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let up = Conv::find(&params, "le.up", 1)?;
        if count_indexed(&params, "le.tail") != 2 {
            return Err(param_err!("le: expected two tail layers"));
        }
        let tail0 = Conv::find(&params, "le.tail.0", 1)?;
        let tail1 = Conv::find(&params, "le.tail.1", 1)?;
        let config = LeConfig { channels: head.out_ch(&params), blocks: n };
        config.validate()?;
        let c = config.channels;
        let ok = head.in_ch(&params) == 3
            && blocks.iter().all(|(a, b)| {
                (a.in_ch(&params), a.out_ch(&params), b.in_ch(&params), b.out_ch(&params)) == (c, c, c, c)
            })
            && (up.in_ch(&params), up.out_ch(&params)) == (c, 4 * c)
            && (tail0.in_ch(&params), tail0.out_ch(&params)) == (c, c)
            && (tail1.in_ch(&params), tail1.out_ch(&params)) == (c, 3);
        if !ok {
            return Err(param_err!("le: layer widths are inconsistent"));
        }
        Ok(Le { config, params, head, blocks, up, tail0, tail1 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(&self.params, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(load_params(path)?)
    }

    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// The network on even-sized input.
    pub fn forward_graph<T: Scalar>(&self, g: &mut Graph<T>, leaves: &[NodeId], x: NodeId) -> Result<NodeId> {
        let [_, c, h, w] = g.shape(x);
        if c != 3 || h % 2 != 0 || w % 2 != 0 {
            return Err(param_err!("le: input must have 3 channels and even sides, got {c}x{h}x{w}"));
        }
        let mut f = self.head.apply(g, leaves, x)?;
        f = g.relu(f)?;
        for (c1, c2) in &self.blocks {
            let r = c1.apply(g, leaves, f)?;
            let r = g.relu(r)?;
            let r = c2.apply(g, leaves, r)?;
            f = g.add(f, r)?;
        }
        f = self.up.apply(g, leaves, f)?;
        f = g.pixel_shuffle(f, 2)?;
        f = g.relu(f)?;
        f = self.tail0.apply(g, leaves, f)?;
        f = g.relu(f)?;
        self.tail1.apply(g, leaves, f)
    }

    /// Unclamped output for any size of at least 2×2; odd sides are
    /// reflect-padded by one row or column and cropped back.
    pub fn forward_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [_, _, h, w] = x.shape();
        let padded = reflect_pad(x, 2)?;
        let mut g = Graph::new();
        let leaves = self.params.register(&mut g, false);
        let xi = g.input(padded);
        let y = self.forward_graph(&mut g, &leaves, xi)?;
        Ok(crop(&g.take_value(y), h, w))
    }

    /// Exported stage output: clamped, 16-bit, PQ/bt2020.
    pub fn le_forward(&self, img: &EncodedImage) -> Result<EncodedImage> {
        stage_image(&self.forward_tensor(&img.to_tensor())?)
    }

    /// Stage outputs for a batch of stage inputs.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let outs = (0..x.batch())
            .map(|b| self.forward_tensor(&x.sample(b)).map(|y| stage_output(&y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&outs)?)
    }
}

/// Adam on mse(le(agcm(sdr)), hdr). The AGCM is only read: its stage
/// outputs are computed once and used as the LE's inputs.
pub fn train_le(
    mut model: Le,
    agcm: &Agcm,
    data: &PairedDataset,
    val: Option<&PairedDataset>,
    config: &TrainConfig,
) -> Result<(Le, TrainLog)> {
    if data.is_empty() {
        return Err(param_err!("train_le: dataset is empty"));
    }
    let inputs = agcm.predict_dataset(data)?;
    let val_inputs = match val {
        Some(v) if !v.is_empty() => Some((v, agcm.predict_dataset(v)?)),
        _ => None,
    };
    let layout = model.clone();
    let mut params = std::mem::take(&mut model.params);
    let log = optimize(
        &mut params,
        data.len(),
        config,
        |g, leaves, idx, _| {
            let items: Vec<Tensor<f32>> = idx.iter().map(|&i| inputs.sample(i)).collect();
            let x = g.input(Tensor::stack(&items)?);
            let y = g.input(data.hdr_tensor(idx));
            let pred = layout.forward_graph(g, leaves, x)?;
            Ok(g.mse_loss(pred, y)?)
        },
        |p| match &val_inputs {
            Some((v, vx)) => {
                let m = Le { params: p.clone(), ..layout.clone() };
                Ok(Some(mean_patch_psnr(&m.predict(vx)?, v)))
            }
            None => Ok(None),
        },
    )?;
    model.params = params;
    Ok((model, log))
}
