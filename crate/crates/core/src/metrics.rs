//! PSNR, SSIM and ΔE_ITP.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::colorpipe::gamut::{conversion_matrix, mat_vec, Mat3};
use crate::colorpipe::transfer::{eotf_value, pq_oetf};
use crate::error::{param_err, Result};
use crate::image::{EncodedImage, Gamut, Rgb, Transfer};

/// Reported for identical images (mse = 0) and as the upper bound otherwise.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Linear level of SDR reference white on the 10000 cd/m² scale.
pub const SDR_WHITE: f64 = 0.01;

/// Luma coefficients (Kr, Kg, Kb).
pub fn luma_weights(gamut: Gamut) -> Rgb {
    match gamut {
        Gamut::Bt2020 => [0.2627, 0.6780, 0.0593],
        _ => [0.2126, 0.7152, 0.0722],
    }
}

fn same_shape(a: &EncodedImage, b: &EncodedImage, what: &str) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(param_err!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ))
    }
}

/// PSNR over flat code arrays of equal length.
pub fn psnr_values(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    let mse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &EncodedImage, b: &EncodedImage) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let fa: Vec<f64> = a.codes().iter().flatten().copied().collect();
    let fb: Vec<f64> = b.codes().iter().flatten().copied().collect();
    Ok(psnr_values(&fa, &fb))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a `w`×`h` plane.
fn filter_valid(p: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn luma(img: &EncodedImage) -> Vec<f64> {
    let k = luma_weights(img.gamut());
    img.codes()
        .iter()
        .map(|p| k[0] * p[0] + k[1] * p[1] + k[2] * p[2])
        .collect()
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows of the luma
/// plane (codes used as-is).
pub fn ssim(a: &EncodedImage, b: &EncodedImage) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(param_err!("ssim: {w}x{h} is smaller than the {SSIM_WINDOW}-pixel window"));
    }
    let (x, y) = (luma(a), luma(b));
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let sxx = filter_valid(&prod(&x, &x), w, h, &k);
    let syy = filter_valid(&prod(&y, &y), w, h, &k);
    let sxy = filter_valid(&prod(&x, &y), w, h, &k);
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n)
}

/// RGB (bt2020, linear) to LMS.
pub const ITP_LMS: Mat3 = [
    [1688.0 / 4096.0, 2146.0 / 4096.0, 262.0 / 4096.0],
    [683.0 / 4096.0, 2951.0 / 4096.0, 462.0 / 4096.0],
    [99.0 / 4096.0, 309.0 / 4096.0, 3688.0 / 4096.0],
];

/// PQ-encoded L'M'S' to ICtCp.
pub const ITP_ICTCP: Mat3 = [
    [2048.0 / 4096.0, 2048.0 / 4096.0, 0.0],
    [6610.0 / 4096.0, -13613.0 / 4096.0, 7003.0 / 4096.0],
    [17933.0 / 4096.0, -17390.0 / 4096.0, -543.0 / 4096.0],
];

/// Absolute linear bt2020 light (1.0 = 10000 cd/m²) of every pixel. SDR
/// codes are decoded with reference white at [`SDR_WHITE`].
pub fn linear_bt2020(img: &EncodedImage) -> Vec<Rgb> {
    let scale = match img.transfer() {
        Transfer::Pq => 1.0,
        Transfer::Gamma22 => SDR_WHITE,
    };
    let m = conversion_matrix(img.gamut(), Gamut::Bt2020);
    img.codes()
        .iter()
        .map(|p| mat_vec(&m, p.map(|v| eotf_value(img.transfer(), v) * scale)))
        .collect()
}

pub fn ictcp(linear: Rgb) -> Rgb {
    let lms = mat_vec(&ITP_LMS, linear).map(|v| pq_oetf(v.clamp(0.0, 1.0)));
    mat_vec(&ITP_ICTCP, lms)
}

/// 720·√(ΔI² + (ΔCt/2)² + ΔCp²) for one pair of ICtCp triples.
pub fn delta_itp(a: Rgb, b: Rgb) -> f64 {
    let di = a[0] - b[0];
    let dt = 0.5 * (a[1] - b[1]);
    let dp = a[2] - b[2];
    720.0 * (di * di + dt * dt + dp * dp).sqrt()
}

/// Mean per-pixel ΔE_ITP.
pub fn delta_e_itp(a: &EncodedImage, b: &EncodedImage) -> Result<f64> {
    same_shape(a, b, "delta_e_itp")?;
    let (la, lb) = (linear_bt2020(a), linear_bt2020(b));
    let n = la.len().max(1) as f64;
    Ok(la.iter().zip(&lb).map(|(&p, &q)| delta_itp(ictcp(p), ictcp(q))).sum::<f64>() / n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub de_itp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// Evaluate (id, prediction, reference) triples; rows keep input order.
    /// SSIM is left empty for images smaller than its window.
    pub fn evaluate(items: &[(String, EncodedImage, EncodedImage)]) -> Result<Self> {
        let rows = items
            .par_iter()
            .map(|(id, a, b)| {
                let ssim = if a.width().min(a.height()) >= SSIM_WINDOW {
                    Some(ssim(a, b)?)
                } else {
                    None
                };
                Ok(MetricRow {
                    id: id.clone(),
                    psnr: psnr(a, b)?,
                    ssim,
                    de_itp: delta_e_itp(a, b)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricReport { rows })
    }

    /// (psnr, ssim, de_itp) arithmetic means in row order.
    pub fn mean(&self) -> (f64, Option<f64>, f64) {
        let n = self.rows.len().max(1) as f64;
        let psnr = self.rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let de = self.rows.iter().map(|r| r.de_itp).sum::<f64>() / n;
        let ssim = self
            .rows
            .iter()
            .map(|r| r.ssim)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        (psnr, ssim, de)
    }

    /// Columns image_id, psnr, ssim, de_itp; the last row is the corpus mean.
    pub fn to_csv(&self) -> String {
        let fmt_ssim = |s: Option<f64>| s.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut s = String::from("image_id,psnr,ssim,de_itp\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{},{:.6}", r.id, r.psnr, fmt_ssim(r.ssim), r.de_itp);
        }
        let (p, ss, d) = self.mean();
        let _ = writeln!(s, "mean,{p:.6},{},{d:.6}", fmt_ssim(ss));
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io_util::write_bytes_atomic(path, self.to_csv().as_bytes())
    }
}
