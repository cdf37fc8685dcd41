use crate::error::{param_err, Result};
use crate::image::EncodedImage;

/// Condition inputs have sides that are multiples of this, so four 2×2
/// pooling stages divide them exactly.
pub const CONDITION_ALIGN: usize = 16;

/// Largest aligned side not above `requested` that fits in `width`×`height`.
/// Returns `None` when the frame is smaller than one alignment unit.
pub fn condition_side(requested: usize, width: usize, height: usize) -> Option<usize> {
    let side = requested.min(width).min(height) / CONDITION_ALIGN * CONDITION_ALIGN;
    (side > 0).then_some(side)
}

/// Overlap weights of source cells [0, n) onto `m` equal output cells.
fn area_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / m as f64;
    (0..m)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while i < n && (i as f64) < hi {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                if overlap > 0.0 {
                    w.push((i, overlap));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Area-average resample to `target`×`target`.
pub fn downsample_for_condition(img: &EncodedImage, target: usize) -> Result<EncodedImage> {
    let (w, h) = (img.width(), img.height());
    if target == 0 || target > w.min(h) {
        return Err(param_err!("condition downsample: target {target} exceeds {w}x{h}"));
    }
    if target == w && target == h {
        return Ok(img.clone());
    }
    let wx = area_weights(w, target);
    let wy = area_weights(h, target);
    // Horizontal pass then vertical pass.
    let mut rows = vec![[0.0f64; 3]; h * target];
    for y in 0..h {
        for (ox, ws) in wx.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(x, f) in ws {
                let p = img.code(x, y);
                for c in 0..3 {
                    acc[c] += f * p[c];
                }
            }
            rows[y * target + ox] = acc;
        }
    }
    let mut out = vec![[0.0f64; 3]; target * target];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..target {
            let mut acc = [0.0; 3];
            for &(y, f) in ws {
                for c in 0..3 {
                    acc[c] += f * rows[y * target + ox][c];
                }
            }
            out[oy * target + ox] = acc.map(|v| v.clamp(0.0, 1.0));
        }
    }
    EncodedImage::new(target, target, img.transfer(), img.gamut(), img.bit_depth(), out)
}
