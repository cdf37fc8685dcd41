use hdrtv_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::resample::{condition_side, downsample_for_condition};
use crate::colorpipe::{quantize_value, ToneCurveParams};
use crate::error::{param_err, Result};
use crate::image::{EncodedImage, Gamut, Transfer};

/// Co-located SDR/HDR crop. Samples are row-major interleaved RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub source_id: u32,
    pub x: u32,
    pub y: u32,
    pub sdr: Vec<u8>,
    pub hdr: Vec<u16>,
}

/// 8-bit downsampled SDR frame fed to the condition network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionImage {
    pub side: usize,
    pub codes: Vec<u8>,
}

impl ConditionImage {
    pub fn from_image(img: &EncodedImage) -> Self {
        debug_assert_eq!(img.width(), img.height());
        let codes = img
            .codes()
            .iter()
            .flat_map(|p| p.map(|v| (v * 255.0).round() as u8))
            .collect();
        ConditionImage {
            side: img.width(),
            codes,
        }
    }

    pub fn to_image(&self) -> EncodedImage {
        let codes = self
            .codes
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        EncodedImage::new_unchecked(self.side, self.side, Transfer::Gamma22, Gamut::Bt709, 8, true, codes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub id: u32,
    pub name: String,
    pub width: u32,
    pub height: u32,
    /// Formation parameters, known for synthetic sources only.
    pub sdr_tone: Option<ToneCurveParams>,
    pub hdr_tone: Option<ToneCurveParams>,
    #[serde(skip)]
    pub condition: Option<ConditionImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub patch_size: usize,
    /// Bit depth the HDR side was formed at; samples are stored at 16 bits.
    pub hdr_bits: u8,
    pub patches: Vec<Patch>,
    pub sources: Vec<SourceInfo>,
    pub metadata: serde_json::Value,
}

pub(crate) fn hdr_code(sample: u16, bits: u8) -> f64 {
    let v = sample as f64 / 65535.0;
    if bits >= 16 {
        v
    } else {
        quantize_value(v, bits)
    }
}

pub(crate) fn hdr_sample(code: f64) -> u16 {
    (code.clamp(0.0, 1.0) * 65535.0).round() as u16
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn source(&self, id: u32) -> Option<&SourceInfo> {
        self.sources.iter().find(|s| s.id == id)
    }

    pub fn patch_sdr_image(&self, i: usize) -> EncodedImage {
        let p = &self.patches[i];
        let codes = p
            .sdr
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        let n = self.patch_size;
        EncodedImage::new_unchecked(n, n, Transfer::Gamma22, Gamut::Bt709, 8, true, codes)
    }

    pub fn patch_hdr_image(&self, i: usize) -> EncodedImage {
        let p = &self.patches[i];
        let bits = self.hdr_bits;
        let codes = p
            .hdr
            .chunks_exact(3)
            .map(|c| [hdr_code(c[0], bits), hdr_code(c[1], bits), hdr_code(c[2], bits)])
            .collect();
        let n = self.patch_size;
        EncodedImage::new_unchecked(n, n, Transfer::Pq, Gamut::Bt2020, bits, true, codes)
    }

    fn planar<S: Copy>(&self, indices: &[usize], get: impl Fn(&Patch) -> &[S], conv: impl Fn(S) -> f32) -> Tensor<f32> {
        let n = self.patch_size;
        let hw = n * n;
        let mut data = vec![0.0f32; indices.len() * 3 * hw];
        for (b, &i) in indices.iter().enumerate() {
            let s = get(&self.patches[i]);
            let base = b * 3 * hw;
            for px in 0..hw {
                for c in 0..3 {
                    data[base + c * hw + px] = conv(s[px * 3 + c]);
                }
            }
        }
        Tensor::from_vec([indices.len(), 3, n, n], data).expect("shape matches data")
    }

    /// SDR batch (B, 3, P, P).
    pub fn sdr_tensor(&self, indices: &[usize]) -> Tensor<f32> {
        self.planar(indices, |p| &p.sdr, |v| v as f32 / 255.0)
    }

    /// HDR batch (B, 3, P, P) on the formation bit-depth lattice.
    pub fn hdr_tensor(&self, indices: &[usize]) -> Tensor<f32> {
        let bits = self.hdr_bits;
        self.planar(indices, |p| &p.hdr, |v| hdr_code(v, bits) as f32)
    }

    /// Condition-network input for a patch: its frame's thumbnail when the
    /// dataset carries one, else the patch itself resampled to an aligned side.
    pub fn condition_image(&self, i: usize) -> Result<EncodedImage> {
        let p = &self.patches[i];
        if let Some(c) = self.source(p.source_id).and_then(|s| s.condition.as_ref()) {
            return Ok(c.to_image());
        }
        let img = self.patch_sdr_image(i);
        let side = condition_side(self.patch_size, img.width(), img.height())
            .ok_or_else(|| param_err!("patch size {} is too small for a condition input", self.patch_size))?;
        downsample_for_condition(&img, side)
    }

    /// Condition batch (B, 3, S, S). All members must share a side.
    pub fn condition_tensor(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let imgs = indices
            .iter()
            .map(|&i| self.condition_image(i).map(|img| img.to_tensor()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&imgs)?)
    }

    /// Split by source: the last `ceil(val_fraction · sources)` sources are
    /// held out, so no frame contributes to both sides.
    pub fn split_by_source(&self, val_fraction: f64) -> Result<(PairedDataset, PairedDataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(param_err!("validation fraction {val_fraction} outside [0, 1)"));
        }
        let mut ids: Vec<u32> = self.sources.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        let n_val = (val_fraction * ids.len() as f64).ceil() as usize;
        let held: Vec<u32> = ids[ids.len() - n_val..].to_vec();
        let part = |val: bool| PairedDataset {
            patch_size: self.patch_size,
            hdr_bits: self.hdr_bits,
            patches: self
                .patches
                .iter()
                .filter(|p| held.contains(&p.source_id) == val)
                .cloned()
                .collect(),
            sources: self
                .sources
                .iter()
                .filter(|s| held.contains(&s.id) == val)
                .cloned()
                .collect(),
            metadata: self.metadata.clone(),
        };
        Ok((part(false), part(true)))
    }

    /// Keep the first `n` patches (and the sources they use).
    pub fn truncated(&self, n: usize) -> PairedDataset {
        let patches: Vec<Patch> = self.patches.iter().take(n).cloned().collect();
        let sources = self
            .sources
            .iter()
            .filter(|s| patches.iter().any(|p| p.source_id == s.id))
            .cloned()
            .collect();
        PairedDataset {
            patch_size: self.patch_size,
            hdr_bits: self.hdr_bits,
            patches,
            sources,
            metadata: self.metadata.clone(),
        }
    }
}
