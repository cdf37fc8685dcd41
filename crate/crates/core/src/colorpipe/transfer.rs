//! Transfer functions: pure power gamma and the perceptual quantizer.

use crate::error::{param_err, Result};
use crate::image::{EncodedImage, Gamut, LinearImage, Transfer};

pub const GAMMA: f64 = 2.2;

/// Perceptual quantizer constants as exact rationals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PqConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b1: f64,
    pub b2: f64,
}

pub const PQ: PqConstants = PqConstants {
    a1: 3424.0 / 4096.0,
    a2: 2413.0 / 4096.0 * 32.0,
    a3: 2392.0 / 4096.0 * 32.0,
    b1: 2610.0 / 16384.0,
    b2: 2523.0 / 4096.0 * 128.0,
};

pub fn gamma_oetf(x: f64) -> f64 {
    x.powf(1.0 / GAMMA)
}

pub fn gamma_eotf(v: f64) -> f64 {
    v.powf(GAMMA)
}

/// Linear light (1.0 = 10000 cd/m²) to PQ code.
///
/// The rational form evaluates to a1^b2 ≈ 7.3e-7 at zero; black is pinned to
/// code 0 instead, a jump below half a 16-bit step.
pub fn pq_oetf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let PqConstants { a1, a2, a3, b1, b2 } = PQ;
    let p = x.powf(b1);
    ((a1 + a2 * p) / (1.0 + a3 * p)).powf(b2)
}

pub fn pq_eotf(v: f64) -> f64 {
    let PqConstants { a1, a2, a3, b1, b2 } = PQ;
    let e = v.powf(1.0 / b2);
    let num = (e - a1).max(0.0);
    (num / (a2 - a3 * e)).powf(1.0 / b1)
}

pub fn oetf_value(transfer: Transfer, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    match transfer {
        Transfer::Gamma22 => gamma_oetf(x),
        Transfer::Pq => pq_oetf(x),
    }
}

pub fn eotf_value(transfer: Transfer, v: f64) -> f64 {
    match transfer {
        Transfer::Gamma22 => gamma_eotf(v),
        Transfer::Pq => pq_eotf(v),
    }
}

/// Encode a linear image. Values are clipped to [0, 1] first, so the result
/// is always a valid code raster. The bit depth tag is the one quantization
/// will later apply; codes stay unquantized here.
pub fn oetf(img: &LinearImage, transfer: Transfer, bit_depth: u8) -> Result<EncodedImage> {
    if img.gamut() == Gamut::Xyz {
        return Err(param_err!("oetf: convert xyz to an RGB gamut first"));
    }
    crate::image::check_bit_depth(bit_depth)?;
    let codes = img
        .pixels()
        .iter()
        .map(|p| p.map(|v| oetf_value(transfer, v)))
        .collect();
    Ok(EncodedImage::new_unchecked(
        img.width(),
        img.height(),
        transfer,
        img.gamut(),
        bit_depth,
        false,
        codes,
    ))
}

/// Decode with the image's own transfer function.
pub fn eotf(img: &EncodedImage) -> LinearImage {
    let pixels = img
        .codes()
        .iter()
        .map(|p| p.map(|v| eotf_value(img.transfer(), v)))
        .collect();
    LinearImage::new_unchecked(img.width(), img.height(), img.gamut(), pixels)
}

/// Decode, insisting on the expected transfer tag.
pub fn eotf_checked(img: &EncodedImage, expected: Transfer) -> Result<LinearImage> {
    if img.transfer() != expected {
        return Err(param_err!(
            "eotf: image is tagged {:?}, expected {expected:?}",
            img.transfer()
        ));
    }
    Ok(eotf(img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pq_endpoints() {
        assert_eq!(pq_oetf(0.0), 0.0);
        assert!(pq_oetf(1e-30) < 1e-6);
        assert_eq!(pq_eotf(0.0), 0.0);
        assert_eq!(pq_oetf(1.0), 1.0);
        assert_eq!(PQ.a1 + PQ.a2, 1.0 + PQ.a3);
        assert_eq!(pq_eotf(1.0), 1.0);
    }

    #[test]
    fn gamma_half() {
        assert_eq!(gamma_eotf(0.5), 0.5f64.powf(2.2));
    }
}
