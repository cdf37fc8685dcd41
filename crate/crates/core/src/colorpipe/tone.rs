//! Global tone curves driven by image statistics.

use serde::{Deserialize, Serialize};

use super::gamut::luminance;
use crate::error::{param_err, Result};
use crate::image::LinearImage;

/// Offset added to luminance before taking logs for the log-average.
pub const LOG_AVERAGE_OFFSET: f64 = 1e-6;
/// Scene key the SDR exposure maps the log-average luminance to.
pub const SDR_KEY: f64 = 0.18;
/// HDR peak on the 10000 cd/m² scale (1000 cd/m²).
pub const HDR_PEAK: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToneCurve {
    Identity,
    Linear { gain: f64 },
    Reinhard { gain: f64 },
    /// x(1 + x/w²)/(1 + x) on the exposed value x = gain·L.
    ReinhardExtended { gain: f64, white: f64 },
    MuLaw { gain: f64, mu: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneCurveParams {
    pub curve: ToneCurve,
    /// Image statistic the curve was derived from (log-average luminance).
    pub theta: f64,
    /// Upper clip level applied after the curve.
    pub clip: Option<f64>,
}

impl ToneCurveParams {
    pub fn identity() -> Self {
        ToneCurveParams {
            curve: ToneCurve::Identity,
            theta: 0.0,
            clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(param_err!("tone curve: {name} must be positive and finite, got {v}"))
            }
        };
        if !self.theta.is_finite() {
            return Err(param_err!("tone curve: theta {} is not finite", self.theta));
        }
        match self.curve {
            ToneCurve::Identity => {}
            ToneCurve::Linear { gain } | ToneCurve::Reinhard { gain } => positive("gain", gain)?,
            ToneCurve::ReinhardExtended { gain, white } => {
                positive("gain", gain)?;
                positive("white point", white)?;
            }
            ToneCurve::MuLaw { gain, mu } => {
                positive("gain", gain)?;
                positive("mu", mu)?;
            }
        }
        if let Some(c) = self.clip {
            positive("clip level", c)?;
        }
        Ok(())
    }

    /// Curve value at luminance `l` (clip included).
    pub fn apply(&self, l: f64) -> f64 {
        let l = l.max(0.0);
        let y = match self.curve {
            ToneCurve::Identity => l,
            ToneCurve::Linear { gain } => gain * l,
            ToneCurve::Reinhard { gain } => {
                let x = gain * l;
                x / (1.0 + x)
            }
            ToneCurve::ReinhardExtended { gain, white } => {
                let x = gain * l;
                x * (1.0 + x / (white * white)) / (1.0 + x)
            }
            ToneCurve::MuLaw { gain, mu } => (1.0 + mu * gain * l).ln() / (1.0 + mu).ln(),
        };
        match self.clip {
            Some(c) => y.min(c),
            None => y,
        }
    }
}

/// Log-average luminance exp(mean ln(Y + offset)).
pub fn log_average_luminance(img: &LinearImage) -> f64 {
    let n = img.pixels().len().max(1) as f64;
    let s: f64 = img
        .pixels()
        .iter()
        .map(|&p| (luminance(img.gamut(), p).max(0.0) + LOG_AVERAGE_OFFSET).ln())
        .sum();
    (s / n).exp()
}

/// Nearest-rank percentile of luminance, `q` in [0, 1].
pub fn luminance_percentile(img: &LinearImage, q: f64) -> f64 {
    let mut ys: Vec<f64> = img
        .pixels()
        .iter()
        .map(|&p| luminance(img.gamut(), p))
        .collect();
    if ys.is_empty() {
        return 0.0;
    }
    ys.sort_by(f64::total_cmp);
    let rank = ((q * ys.len() as f64).ceil() as usize).clamp(1, ys.len());
    ys[rank - 1]
}

/// SDR curve: exposure keyed on the log-average, extended Reinhard with the
/// white point at the exposed 99th-percentile luminance, clip at 1.
/// `key_jitter` scales the key.
pub fn sdr_default(raw: &LinearImage, key_jitter: f64) -> ToneCurveParams {
    let theta = log_average_luminance(raw);
    let gain = SDR_KEY * key_jitter / theta;
    let white = (gain * luminance_percentile(raw, 0.99)).max(1e-6);
    ToneCurveParams {
        curve: ToneCurve::ReinhardExtended { gain, white },
        theta,
        clip: Some(1.0),
    }
}

/// HDR curve: linear scale that keeps a 1000 cd/m² scene value at 0.1,
/// times `gain_jitter`, clipped at the 1000 cd/m² peak.
pub fn hdr_default(raw: &LinearImage, gain_jitter: f64) -> ToneCurveParams {
    ToneCurveParams {
        curve: ToneCurve::Linear { gain: gain_jitter },
        theta: log_average_luminance(raw),
        clip: Some(HDR_PEAK),
    }
}

/// Apply the curve to luminance and scale every component by the ratio,
/// which keeps chromaticity.
pub fn tone_map_global(img: &LinearImage, params: &ToneCurveParams) -> Result<LinearImage> {
    params.validate()?;
    if params.curve == ToneCurve::Identity && params.clip.is_none() {
        return Ok(img.clone());
    }
    let g = img.gamut();
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            let y = luminance(g, p);
            if y > 0.0 {
                let r = params.apply(y) / y;
                p.map(|v| v * r)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    Ok(img.with_pixels(g, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reinhard_at_one() {
        let p = ToneCurveParams {
            curve: ToneCurve::Reinhard { gain: 1.0 },
            theta: 0.0,
            clip: None,
        };
        assert_eq!(p.apply(1.0), 0.5);
    }

    #[test]
    fn rejects_non_monotone() {
        let p = ToneCurveParams {
            curve: ToneCurve::Linear { gain: -1.0 },
            theta: 0.0,
            clip: None,
        };
        assert!(p.validate().is_err());
    }
}
