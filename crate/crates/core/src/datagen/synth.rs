//! Deterministic pseudo-raw scenes in linear XYZ.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorpipe::gamut::{luminance, mat_vec, BT709_TO_XYZ};
use crate::error::{param_err, Result};
use crate::image::{Gamut, LinearImage, Rgb};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub stride: usize,
    pub cond_size: usize,
    pub hdr_bits: u8,
    /// Log-uniform range of the SDR exposure key multiplier.
    pub sdr_key_jitter: (f64, f64),
    /// Log-uniform range of the HDR gain multiplier.
    pub hdr_gain_jitter: (f64, f64),
    /// Luminance span of the smooth gradient, in decades.
    pub gradient_decades: f64,
    /// Amplitude of the band-limited texture, in decades.
    pub texture_decades: f64,
    /// Inclusive range of highlight blob counts per image.
    pub highlights: (usize, usize),
    /// Blob peak luminance relative to the pre-blob 99th percentile.
    pub highlight_gain: (f64, f64),
    /// Log-average luminance every scene is normalized to (0.001 = 10 cd/m²).
    pub scene_log_average: f64,
    /// 99th-percentile luminance every scene is normalized to.
    pub scene_p99: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 48,
            width: 64,
            height: 64,
            seed: 0,
            patch_size: 32,
            stride: 32,
            cond_size: 128,
            hdr_bits: 10,
            sdr_key_jitter: (0.5, 2.0),
            hdr_gain_jitter: (1.0, 1.0),
            gradient_decades: 3.0,
            texture_decades: 0.4,
            highlights: (1, 3),
            highlight_gain: (4.0, 30.0),
            scene_log_average: 0.001,
            scene_p99: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64)| {
            if lo > 0.0 && hi >= lo && hi.is_finite() {
                Ok(())
            } else {
                Err(param_err!("synth: {name} range ({lo}, {hi}) is invalid"))
            }
        };
        if self.count == 0 || self.width < 16 || self.height < 16 {
            return Err(param_err!(
                "synth: need at least one image of at least 16x16, got {} of {}x{}",
                self.count,
                self.width,
                self.height
            ));
        }
        if self.patch_size == 0 || self.patch_size > self.width.min(self.height) || self.stride == 0 {
            return Err(param_err!(
                "synth: patch {} stride {} do not fit {}x{}",
                self.patch_size,
                self.stride,
                self.width,
                self.height
            ));
        }
        crate::image::check_bit_depth(self.hdr_bits)?;
        range("sdr_key_jitter", self.sdr_key_jitter)?;
        range("hdr_gain_jitter", self.hdr_gain_jitter)?;
        range("highlight_gain", self.highlight_gain)?;
        if self.highlights.0 > self.highlights.1 {
            return Err(param_err!("synth: highlight count range is reversed"));
        }
        if !(self.scene_log_average > 0.0 && self.scene_p99 > self.scene_log_average) {
            return Err(param_err!("synth: scene p99 must exceed the log-average"));
        }
        if !(self.gradient_decades >= 0.0 && self.texture_decades >= 0.0) {
            return Err(param_err!("synth: gradient/texture weights must be non-negative"));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, index: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ salt).wrapping_add(index as u64)))
}

const SCENE_STREAM: u64 = 0x5343_454e_45;
const JITTER_STREAM: u64 = 0x4a49_5454_4552;

fn log_uniform<R: Rng>(r: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        (r.gen_range(lo.ln()..hi.ln())).exp()
    }
}

/// (SDR key multiplier, HDR gain multiplier) of image `index`.
pub fn synth_jitter(config: &SynthConfig, index: usize) -> (f64, f64) {
    let mut r = stream(config.seed, index, JITTER_STREAM);
    let s = log_uniform(&mut r, config.sdr_key_jitter);
    let h = log_uniform(&mut r, config.hdr_gain_jitter);
    (s, h)
}

/// Linear bt709 color of unit luminance from hue and saturation.
fn unit_color(hue: f64, sat: f64) -> Rgb {
    let h = hue.rem_euclid(1.0) * 6.0;
    let f = h - h.floor();
    let (p, q, t) = (1.0 - sat, 1.0 - sat * f, 1.0 - sat * (1.0 - f));
    let rgb = match h as usize {
        0 => [1.0, t, p],
        1 => [q, 1.0, p],
        2 => [p, 1.0, t],
        3 => [p, q, 1.0],
        4 => [t, p, 1.0],
        _ => [1.0, p, q],
    };
    let y = luminance(Gamut::Bt709, rgb);
    rgb.map(|v| v / y)
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

fn waves<R: Rng>(r: &mut R, n: usize, freq: (f64, f64), amp: f64) -> Vec<Wave> {
    (0..n)
        .map(|_| {
            let a = r.gen_range(0.0..TAU);
            let f = r.gen_range(freq.0..freq.1);
            Wave {
                fx: f * a.cos(),
                fy: f * a.sin(),
                phase: r.gen_range(0.0..TAU),
                amp: amp * r.gen_range(0.5..1.0),
            }
        })
        .collect()
}

fn eval(ws: &[Wave], u: f64, v: f64) -> f64 {
    ws.iter()
        .map(|w| w.amp * (TAU * (w.fx * u + w.fy * v) + w.phase).sin())
        .sum()
}

/// Scene `index`: a smooth log-luminance gradient with band-limited texture,
/// a soft shadow and two blended hues, plus near-white highlight blobs well above the SDR
/// clip level. Luminance is then remapped (log-affine) so the log-average and
/// 99th percentile hit the configured targets.
pub fn synth_raw(config: &SynthConfig, index: usize) -> Result<LinearImage> {
    config.validate()?;
    if index >= config.count {
        return Err(param_err!("synth: index {index} out of range for {} images", config.count));
    }
    let (w, h) = (config.width, config.height);
    let mut r = stream(config.seed, index, SCENE_STREAM);

    let dir = r.gen_range(0.0..TAU);
    let span = config.gradient_decades * r.gen_range(0.7..1.0);
    let texture = waves(&mut r, 6, (1.5, 6.0), config.texture_decades / 6f64.sqrt());
    let blend = waves(&mut r, 2, (0.5, 1.5), 0.5);
    let c0 = unit_color(r.gen(), r.gen_range(0.1..0.7));
    let c1 = unit_color(r.gen(), r.gen_range(0.1..0.7));
    // The shadow sits towards the dark end of the gradient and deepens it.
    let reach = r.gen_range(0.2..0.35);
    let shadow = (
        -reach * dir.cos(),
        -reach * dir.sin(),
        r.gen_range(0.08..0.15),
        r.gen_range(1.5..2.5),
    );

    let mut ys = Vec::with_capacity(w * h);
    let mut chroma = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64 - 0.5;
            let v = (y as f64 + 0.5) / h as f64 - 0.5;
            let (sx, sy, sr, depth) = shadow;
            let dip = depth * (-((u - sx).powi(2) + (v - sy).powi(2)) / (2.0 * sr * sr)).exp();
            let l = span * (dir.cos() * u + dir.sin() * v) + eval(&texture, u, v) - dip;
            ys.push(10f64.powf(l));
            let t = (0.5 + eval(&blend, u, v)).clamp(0.0, 1.0);
            chroma.push([0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t));
        }
    }

    // Highlights, scaled against the base field's 99th percentile.
    let p99 = percentile(&ys, 0.99);
    let n_blobs = r.gen_range(config.highlights.0..=config.highlights.1);
    let size = w.min(h) as f64;
    for _ in 0..n_blobs {
        let cx = r.gen_range(0.1..0.9) * w as f64;
        let cy = r.gen_range(0.1..0.9) * h as f64;
        let sigma = r.gen_range(0.025..0.06) * size;
        let peak = p99 * r.gen_range(config.highlight_gain.0..config.highlight_gain.1);
        let tint = unit_color(r.gen(), r.gen_range(0.0..0.15));
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                let add = peak * (-d2 / (2.0 * sigma * sigma)).exp();
                if add > 1e-12 * p99 {
                    let i = y * w + x;
                    let total = ys[i] + add;
                    chroma[i] = [0, 1, 2].map(|c| (chroma[i][c] * ys[i] + tint[c] * add) / total);
                    ys[i] = total;
                }
            }
        }
    }

    normalize(&mut ys, config.scene_log_average, config.scene_p99);
    let pixels = ys
        .iter()
        .zip(&chroma)
        .map(|(&y, &c)| mat_vec(&BT709_TO_XYZ, c.map(|v| v * y)))
        .collect();
    LinearImage::new(w, h, Gamut::Xyz, pixels)
}

fn percentile(ys: &[f64], q: f64) -> f64 {
    let mut s = ys.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}

/// Remap Y ↦ exp(a + b·ln Y) so the nearest-rank 99th percentile equals
/// `p99` and the offset log-average used by the tone curves equals `avg`.
fn normalize(ys: &mut [f64], avg: f64, p99: f64) {
    use crate::colorpipe::tone::LOG_AVERAGE_OFFSET;
    let lq = percentile(ys, 0.99).ln();
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let log_avg = |b: f64| {
        let a = p99.ln() - b * lq;
        let s: f64 = logs.iter().map(|&l| ((a + b * l).exp() + LOG_AVERAGE_OFFSET).ln()).sum();
        s / logs.len() as f64
    };
    // The offset log-average decreases monotonically in b.
    let target = avg.ln();
    let (mut lo, mut hi) = (1e-3, 20.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if log_avg(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let a = p99.ln() - b * lq;
    for (y, &l) in ys.iter_mut().zip(&logs) {
        *y = (a + b * l).exp();
    }
}
