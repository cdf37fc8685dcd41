use rayon::prelude::*;
use serde_json::json;

use super::dataset::{hdr_sample, ConditionImage, PairedDataset, Patch, SourceInfo};
use super::resample::{condition_side, downsample_for_condition};
use super::synth::{synth_jitter, synth_raw, SynthConfig};
use crate::colorpipe::{form_content, hdr_default, quantize, sdr_default, Standard, ToneCurveParams};
use crate::error::Result;
use crate::image::{EncodedImage, LinearImage};

/// SDR and HDR renditions of one raw scene.
pub fn form_pair(
    raw: &LinearImage,
    sdr_tone: &ToneCurveParams,
    hdr_tone: &ToneCurveParams,
    hdr_bits: u8,
) -> Result<(EncodedImage, EncodedImage)> {
    let sdr = form_content(raw, Standard::Sdr, sdr_tone)?;
    let hdr = form_content(raw, Standard::Hdr { bits: hdr_bits }, hdr_tone)?;
    Ok((sdr, hdr))
}

/// Top-left corners of every full patch, row by row.
pub fn tile_offsets(width: usize, height: usize, patch: usize, stride: usize) -> Vec<(usize, usize)> {
    if patch == 0 || stride == 0 || patch > width || patch > height {
        return Vec::new();
    }
    let xs: Vec<usize> = (0..=width - patch).step_by(stride).collect();
    (0..=height - patch)
        .step_by(stride)
        .flat_map(|y| xs.iter().map(move |&x| (x, y)))
        .collect()
}

pub(crate) fn cut_patches(
    source_id: u32,
    sdr: &EncodedImage,
    hdr: &EncodedImage,
    patch: usize,
    stride: usize,
) -> Vec<Patch> {
    tile_offsets(sdr.width(), sdr.height(), patch, stride)
        .into_iter()
        .map(|(x0, y0)| {
            let mut s = Vec::with_capacity(patch * patch * 3);
            let mut h = Vec::with_capacity(patch * patch * 3);
            for y in y0..y0 + patch {
                for x in x0..x0 + patch {
                    s.extend(sdr.code(x, y).map(|v| (v * 255.0).round() as u8));
                    h.extend(hdr.code(x, y).map(hdr_sample));
                }
            }
            Patch {
                source_id,
                x: x0 as u32,
                y: y0 as u32,
                sdr: s,
                hdr: h,
            }
        })
        .collect()
}

pub(crate) fn condition_thumbnail(sdr: &EncodedImage, side: Option<usize>) -> Result<Option<ConditionImage>> {
    match side {
        Some(s) => {
            let small = quantize(&downsample_for_condition(sdr, s)?, 8)?;
            Ok(Some(ConditionImage::from_image(&small)))
        }
        None => Ok(None),
    }
}

fn synth_frame_with_tones(
    config: &SynthConfig,
    index: usize,
) -> Result<(EncodedImage, EncodedImage, ToneCurveParams, ToneCurveParams)> {
    let raw = synth_raw(config, index)?;
    let (js, jh) = synth_jitter(config, index);
    let st = sdr_default(&raw, js);
    let ht = hdr_default(&raw, jh);
    let (sdr, hdr) = form_pair(&raw, &st, &ht, config.hdr_bits)?;
    Ok((sdr, hdr, st, ht))
}

/// Full-frame SDR and HDR renditions of synthetic scene `index`.
pub fn synth_frame(config: &SynthConfig, index: usize) -> Result<(EncodedImage, EncodedImage)> {
    config.validate()?;
    let (sdr, hdr, _, _) = synth_frame_with_tones(config, index)?;
    Ok((sdr, hdr))
}

/// Synthesize `config.count` scenes and form their SDR/HDR pairs with
/// per-image jittered tone parameters. Patches are ordered by source, then
/// raster position.
pub fn build_pairs(config: &SynthConfig) -> Result<PairedDataset> {
    config.validate()?;
    let side = condition_side(config.cond_size, config.width, config.height);
    let per_image: Vec<(Vec<Patch>, SourceInfo)> = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let (sdr, hdr, st, ht) = synth_frame_with_tones(config, i)?;
            let id = i as u32;
            let patches = cut_patches(id, &sdr, &hdr, config.patch_size, config.stride);
            let info = SourceInfo {
                id,
                name: format!("synth_{i:05}"),
                width: config.width as u32,
                height: config.height as u32,
                sdr_tone: Some(st),
                hdr_tone: Some(ht),
                condition: condition_thumbnail(&sdr, side)?,
            };
            Ok((patches, info))
        })
        .collect::<Result<_>>()?;
    let mut patches = Vec::new();
    let mut sources = Vec::new();
    for (p, s) in per_image {
        patches.extend(p);
        sources.push(s);
    }
    Ok(PairedDataset {
        patch_size: config.patch_size,
        hdr_bits: config.hdr_bits,
        patches,
        sources,
        metadata: json!({ "kind": "synth", "config": config }),
    })
}
