//! Raster types shared by every stage.

use hdrtv_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gamut {
    Bt709,
    Bt2020,
    Xyz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    Gamma22,
    Pq,
}

pub type Rgb = [f64; 3];

/// Scene-linear RGB raster. For HDR-referred signals 1.0 is 10000 cd/m².
///
/// [`LinearImage::new`] enforces finite, non-negative values. Gamut
/// conversion keeps out-of-gamut negatives, so converted images may hold
/// negative components until they are clipped ahead of the OETF.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    gamut: Gamut,
    pixels: Vec<Rgb>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, gamut: Gamut, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(param_err!(
                "linear image: {} pixels for {width}x{height}",
                pixels.len()
            ));
        }
        if let Some(p) = pixels
            .iter()
            .find(|p| p.iter().any(|v| !v.is_finite() || *v < 0.0))
        {
            return Err(param_err!("linear image: invalid pixel {p:?}"));
        }
        Ok(LinearImage {
            width,
            height,
            gamut,
            pixels,
        })
    }

    pub(crate) fn new_unchecked(width: usize, height: usize, gamut: Gamut, pixels: Vec<Rgb>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        LinearImage {
            width,
            height,
            gamut,
            pixels,
        }
    }

    pub fn constant(width: usize, height: usize, gamut: Gamut, value: Rgb) -> Result<Self> {
        Self::new(width, height, gamut, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gamut(&self) -> Gamut {
        self.gamut
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    pub(crate) fn with_pixels(&self, gamut: Gamut, pixels: Vec<Rgb>) -> Self {
        Self::new_unchecked(self.width, self.height, gamut, pixels)
    }
}

/// Display-referred code raster: what image files store.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedImage {
    width: usize,
    height: usize,
    transfer: Transfer,
    gamut: Gamut,
    bit_depth: u8,
    quantized: bool,
    codes: Vec<Rgb>,
}

pub const BIT_DEPTHS: [u8; 4] = [8, 10, 12, 16];

pub(crate) fn check_bit_depth(n: u8) -> Result<()> {
    if BIT_DEPTHS.contains(&n) {
        Ok(())
    } else {
        Err(param_err!("unsupported bit depth {n}; expected one of {BIT_DEPTHS:?}"))
    }
}

impl EncodedImage {
    /// Unquantized codes. Every value must lie in [0, 1].
    pub fn new(
        width: usize,
        height: usize,
        transfer: Transfer,
        gamut: Gamut,
        bit_depth: u8,
        codes: Vec<Rgb>,
    ) -> Result<Self> {
        Self::build(width, height, transfer, gamut, bit_depth, false, codes)
    }

    /// Quantized codes: every value must be an exact multiple of 1/(2ⁿ−1).
    pub fn new_quantized(
        width: usize,
        height: usize,
        transfer: Transfer,
        gamut: Gamut,
        bit_depth: u8,
        codes: Vec<Rgb>,
    ) -> Result<Self> {
        let levels = ((1u32 << bit_depth) - 1) as f64;
        if let Some(v) = codes
            .iter()
            .flatten()
            .find(|v| (**v * levels).round() / levels != **v)
        {
            return Err(param_err!("code {v} is not on the {bit_depth}-bit lattice"));
        }
        Self::build(width, height, transfer, gamut, bit_depth, true, codes)
    }

    fn build(
        width: usize,
        height: usize,
        transfer: Transfer,
        gamut: Gamut,
        bit_depth: u8,
        quantized: bool,
        codes: Vec<Rgb>,
    ) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        if gamut == Gamut::Xyz {
            return Err(param_err!("encoded images are bt709 or bt2020, not xyz"));
        }
        if codes.len() != width * height {
            return Err(param_err!(
                "encoded image: {} pixels for {width}x{height}",
                codes.len()
            ));
        }
        if let Some(p) = codes
            .iter()
            .find(|p| p.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(param_err!("encoded image: code {p:?} outside [0, 1]"));
        }
        Ok(EncodedImage {
            width,
            height,
            transfer,
            gamut,
            bit_depth,
            quantized,
            codes,
        })
    }

    pub(crate) fn new_unchecked(
        width: usize,
        height: usize,
        transfer: Transfer,
        gamut: Gamut,
        bit_depth: u8,
        quantized: bool,
        codes: Vec<Rgb>,
    ) -> Self {
        EncodedImage {
            width,
            height,
            transfer,
            gamut,
            bit_depth,
            quantized,
            codes,
        }
    }

    /// SDR tagging: gamma 2.2, bt709.
    pub fn sdr(width: usize, height: usize, bit_depth: u8, codes: Vec<Rgb>) -> Result<Self> {
        Self::new(width, height, Transfer::Gamma22, Gamut::Bt709, bit_depth, codes)
    }

    /// HDR tagging: PQ, bt2020.
    pub fn hdr(width: usize, height: usize, bit_depth: u8, codes: Vec<Rgb>) -> Result<Self> {
        Self::new(width, height, Transfer::Pq, Gamut::Bt2020, bit_depth, codes)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn transfer(&self) -> Transfer {
        self.transfer
    }

    pub fn gamut(&self) -> Gamut {
        self.gamut
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn is_quantized(&self) -> bool {
        self.quantized
    }

    pub fn codes(&self) -> &[Rgb] {
        &self.codes
    }

    pub fn code(&self, x: usize, y: usize) -> Rgb {
        self.codes[y * self.width + x]
    }

    pub fn into_codes(self) -> Vec<Rgb> {
        self.codes
    }

    pub fn same_dims(&self, other: &EncodedImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Retag, keeping codes and dimensions.
    pub fn retagged(&self, transfer: Transfer, gamut: Gamut, bit_depth: u8) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        if gamut == Gamut::Xyz {
            return Err(param_err!("encoded images are bt709 or bt2020, not xyz"));
        }
        Ok(Self::new_unchecked(
            self.width,
            self.height,
            transfer,
            gamut,
            bit_depth,
            false,
            self.codes.clone(),
        ))
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(param_err!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width,
                self.height
            ));
        }
        let mut codes = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            codes.extend_from_slice(&self.codes[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self::new_unchecked(
            w,
            h,
            self.transfer,
            self.gamut,
            self.bit_depth,
            self.quantized,
            codes,
        ))
    }

    /// Planar (1, 3, H, W) network tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let hw = self.width * self.height;
        let mut data = vec![0.0f32; 3 * hw];
        for (i, p) in self.codes.iter().enumerate() {
            for c in 0..3 {
                data[c * hw + i] = p[c] as f32;
            }
        }
        Tensor::from_vec([1, 3, self.height, self.width], data).expect("shape matches data")
    }

    /// Build from sample `b` of a network output, clamping to [0, 1].
    pub fn from_tensor(
        t: &Tensor<f32>,
        b: usize,
        transfer: Transfer,
        gamut: Gamut,
        bit_depth: u8,
    ) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if c != 3 || b >= n {
            return Err(param_err!("tensor {:?} is not an RGB batch with sample {b}", t.shape()));
        }
        let hw = h * w;
        let base = b * 3 * hw;
        let d = t.data();
        let codes = (0..hw)
            .map(|i| {
                let mut p = [0.0; 3];
                for (ch, v) in p.iter_mut().enumerate() {
                    let x = d[base + ch * hw + i] as f64;
                    *v = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
                }
                p
            })
            .collect();
        Self::build(w, h, transfer, gamut, bit_depth, false, codes)
    }
}
