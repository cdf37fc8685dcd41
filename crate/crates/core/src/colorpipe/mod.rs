//! Content formation: tone mapping, gamut mapping, OETF, quantization.

pub mod gamut;
pub mod quantize;
pub mod tone;
pub mod transfer;

use serde::{Deserialize, Serialize};

pub use gamut::{gamut_convert, luminance};
pub use quantize::{quantize, quantize_value};
pub use tone::{hdr_default, sdr_default, tone_map_global, ToneCurve, ToneCurveParams};
pub use transfer::{eotf, oetf, pq_eotf, pq_oetf, PQ};

use crate::error::Result;
use crate::image::{EncodedImage, Gamut, LinearImage, Transfer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "standard", rename_all = "lowercase")]
pub enum Standard {
    /// Gamma 2.2, bt709, 8 bits.
    Sdr,
    /// PQ, bt2020, `bits` ∈ {10, 12, 16}.
    Hdr { bits: u8 },
}

impl Standard {
    pub const HDR10: Standard = Standard::Hdr { bits: 10 };

    pub fn transfer(self) -> Transfer {
        match self {
            Standard::Sdr => Transfer::Gamma22,
            Standard::Hdr { .. } => Transfer::Pq,
        }
    }

    pub fn gamut(self) -> Gamut {
        match self {
            Standard::Sdr => Gamut::Bt709,
            Standard::Hdr { .. } => Gamut::Bt2020,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            Standard::Sdr => 8,
            Standard::Hdr { bits } => bits,
        }
    }
}

/// Tone map, convert to the target primaries, encode, quantize.
pub fn form_content(
    raw: &LinearImage,
    standard: Standard,
    tone: &ToneCurveParams,
) -> Result<EncodedImage> {
    let toned = tone_map_global(raw, tone)?;
    let mapped = gamut_convert(&toned, standard.gamut());
    let encoded = oetf(&mapped, standard.transfer(), standard.bits())?;
    quantize(&encoded, standard.bits())
}
