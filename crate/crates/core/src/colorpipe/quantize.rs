use crate::error::Result;
use crate::image::{check_bit_depth, EncodedImage};

pub fn quantize_value(x: f64, n: u8) -> f64 {
    let levels = ((1u32 << n) - 1) as f64;
    (levels * x + 0.5).floor() / levels
}

/// Integer code of a value already on the n-bit lattice (or to be rounded to it).
pub fn code_index(x: f64, n: u8) -> u32 {
    let levels = ((1u32 << n) - 1) as f64;
    (levels * x.clamp(0.0, 1.0) + 0.5).floor() as u32
}

pub fn quantize(img: &EncodedImage, n: u8) -> Result<EncodedImage> {
    check_bit_depth(n)?;
    let codes = img
        .codes()
        .iter()
        .map(|p| p.map(|v| quantize_value(v, n)))
        .collect();
    Ok(EncodedImage::new_unchecked(
        img.width(),
        img.height(),
        img.transfer(),
        img.gamut(),
        n,
        true,
        codes,
    ))
}
