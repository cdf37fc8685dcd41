//! Color-transition test card.
//!
//! Seven vertical bands, in order red, green, blue, cyan, magenta, yellow
//! and neutral. Inside a band the level ℓ falls linearly from 1.5 on the
//! top row to 0.4 on the bottom row, and the saturation s rises linearly
//! from 0 at the band's left column to 1 at its right column. With h the
//! band's 0/1 hue vector, each channel is `clamp(ℓ·(1 − s·(1 − h)), 0, 1)`,
//! quantized to 8 bits. Every band's peak channels sit at code 1.0 over
//! the top rows, where the ramp crosses into the clip region.

use crate::colorpipe::quantize_value;
use crate::error::{param_err, Result};
use crate::image::EncodedImage;

pub const MIN_SIDE: usize = 64;
pub const TOP_LEVEL: f64 = 1.5;
pub const BOTTOM_LEVEL: f64 = 0.4;

pub const BANDS: [[f64; 3]; 7] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 1.0, 1.0],
];

/// Band index and its first column for column `x`; the last band takes
/// the remainder columns.
pub fn band_of(x: usize, width: usize) -> (usize, usize) {
    let bw = width / BANDS.len();
    let band = (x / bw).min(BANDS.len() - 1);
    (band, band * bw)
}

pub fn make_testcard(width: usize, height: usize) -> Result<EncodedImage> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(param_err!("test card needs at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"));
    }
    let bw = width / BANDS.len();
    let mut codes = Vec::with_capacity(width * height);
    for y in 0..height {
        let level = TOP_LEVEL + (BOTTOM_LEVEL - TOP_LEVEL) * y as f64 / (height - 1) as f64;
        for x in 0..width {
            let (band, x0) = band_of(x, width);
            let span = if band == BANDS.len() - 1 { width - x0 } else { bw };
            let s = (x - x0) as f64 / (span - 1).max(1) as f64;
            let h = BANDS[band];
            codes.push(h.map(|hc| quantize_value((level * (1.0 - s * (1.0 - hc))).clamp(0.0, 1.0), 8)));
        }
    }
    EncodedImage::new_quantized(
        width,
        height,
        crate::image::Transfer::Gamma22,
        crate::image::Gamut::Bt709,
        8,
        codes,
    )
}
