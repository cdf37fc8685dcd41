use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::dataset::{PairedDataset, SourceInfo};
use super::pairs::{condition_thumbnail, cut_patches};
use super::png_io::read_png;
use super::resample::condition_side;
use crate::error::{param_err, Error, Result};

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let p = e.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            names.insert(e.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

fn mismatch(file: PathBuf, message: impl Into<String>) -> Error {
    Error::Ingest { file, message: message.into() }
}

/// Pair equally named PNG frames (8-bit SDR, 16-bit HDR), cut co-located
/// patches and shuffle them with `seed`. Frames are read in parallel; any
/// mismatch aborts before a dataset exists.
pub fn ingest_pairs(
    sdr_dir: &Path,
    hdr_dir: &Path,
    patch_size: usize,
    stride: usize,
    seed: u64,
    cond_size: usize,
) -> Result<PairedDataset> {
    if patch_size == 0 || stride == 0 {
        return Err(param_err!("ingest: patch size and stride must be positive"));
    }
    let sdr_names = png_names(sdr_dir)?;
    let hdr_names = png_names(hdr_dir)?;
    if let Some(n) = sdr_names.symmetric_difference(&hdr_names).next() {
        let file = if sdr_names.contains(n) { hdr_dir.join(n) } else { sdr_dir.join(n) };
        return Err(mismatch(file, "no counterpart frame with this name"));
    }
    if sdr_names.is_empty() {
        return Err(mismatch(sdr_dir.to_path_buf(), "no PNG frames found"));
    }
    let names: Vec<String> = sdr_names.into_iter().collect();
    let frames = names
        .par_iter()
        .map(|name| {
            let (sp, hp) = (sdr_dir.join(name), hdr_dir.join(name));
            let sdr = read_png(&sp)?;
            let hdr = read_png(&hp)?;
            if sdr.bit_depth() != 8 {
                return Err(mismatch(sp, "SDR frames must be 8-bit"));
            }
            if hdr.bit_depth() != 16 {
                return Err(mismatch(hp, "HDR frames must be 16-bit"));
            }
            if !sdr.same_dims(&hdr) {
                return Err(mismatch(
                    hp,
                    format!(
                        "dimensions {}x{} differ from SDR frame {}x{}",
                        hdr.width(),
                        hdr.height(),
                        sdr.width(),
                        sdr.height()
                    ),
                ));
            }
            if sdr.width() < patch_size || sdr.height() < patch_size {
                return Err(mismatch(sp, format!("frame is smaller than patch size {patch_size}")));
            }
            Ok((sdr, hdr))
        })
        .collect::<Result<Vec<_>>>()?;

    // One condition side for the whole dataset so batches stack.
    let min_dim = frames.iter().map(|(s, _)| s.width().min(s.height())).min().unwrap_or(0);
    let side = condition_side(cond_size, min_dim, min_dim);
    let mut patches = Vec::new();
    let mut sources = Vec::new();
    for (i, (name, (sdr, hdr))) in names.iter().zip(&frames).enumerate() {
        let id = i as u32;
        patches.extend(cut_patches(id, sdr, hdr, patch_size, stride));
        sources.push(SourceInfo {
            id,
            name: name.clone(),
            width: sdr.width() as u32,
            height: sdr.height() as u32,
            sdr_tone: None,
            hdr_tone: None,
            condition: condition_thumbnail(sdr, side)?,
        });
    }
    patches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(PairedDataset {
        patch_size,
        hdr_bits: 16,
        patches,
        sources,
        metadata: json!({
            "kind": "ingest",
            "patch_size": patch_size,
            "stride": stride,
            "seed": seed,
            "cond_size": cond_size,
        }),
    })
}
