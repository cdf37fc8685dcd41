//! 3D LUT export from a trained color map, trilinear application, the
//! `.cube` text format and a PLY point cloud of the lattice.
//!
//! Lattice index order is `r + N·g + N²·b` (red fastest), which is also
//! the data-line order of `.cube` files.

use std::fmt::Write as _;
use std::path::Path;

use hdrtv_tensor::Tensor;
use rayon::prelude::*;

use crate::error::{param_err, Error, Result};
use crate::image::{EncodedImage, Gamut, Rgb, Transfer};
use crate::models::{Agcm, ConditionVector};

pub const MIN_EXPORT_SIZE: usize = 2;
pub const MAX_EXPORT_SIZE: usize = 65;
/// Largest size accepted when reading files from other tools.
pub const MAX_READ_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Lut3D {
    size: usize,
    data: Vec<Rgb>,
    pub title: String,
}

impl Lut3D {
    pub fn new(size: usize, data: Vec<Rgb>, title: impl Into<String>) -> Result<Self> {
        if !(2..=MAX_READ_SIZE).contains(&size) {
            return Err(param_err!("lut size {size} outside [2, {MAX_READ_SIZE}]"));
        }
        if data.len() != size.pow(3) {
            return Err(param_err!("lut of size {size} needs {} entries, got {}", size.pow(3), data.len()));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(param_err!("lut entries must be finite"));
        }
        Ok(Lut3D { size, data, title: title.into() })
    }

    pub fn identity(size: usize) -> Result<Self> {
        Self::new(size, lattice_inputs(size), "identity")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[Rgb] {
        &self.data
    }

    pub fn index(&self, r: usize, g: usize, b: usize) -> usize {
        r + self.size * (g + self.size * b)
    }

    pub fn at(&self, r: usize, g: usize, b: usize) -> Rgb {
        self.data[self.index(r, g, b)]
    }

    /// Trilinear interpolation; inputs are clamped to the unit cube.
    pub fn apply_color(&self, c: Rgb) -> Rgb {
        let n1 = (self.size - 1) as f64;
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for k in 0..3 {
            let mut pos = c[k].clamp(0.0, 1.0) * n1;
            let r = pos.round();
            // snap so that lattice inputs hit their entry exactly
            if (pos - r).abs() < 1e-9 {
                pos = r;
            }
            let lo = (pos.floor() as usize).min(self.size - 2);
            i0[k] = lo;
            f[k] = pos - lo as f64;
        }
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for k in 0..3 {
                w *= if d[k] == 1 { f[k] } else { 1.0 - f[k] };
            }
            if w == 0.0 {
                continue;
            }
            let v = self.at(i0[0] + d[0], i0[1] + d[1], i0[2] + d[2]);
            for k in 0..3 {
                out[k] += w * v[k];
            }
        }
        out
    }

    pub fn to_cube(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "TITLE \"{}\"", self.title.replace('"', "'"));
        let _ = writeln!(s, "LUT_3D_SIZE {}", self.size);
        let _ = writeln!(s, "DOMAIN_MIN 0 0 0");
        let _ = writeln!(s, "DOMAIN_MAX 1 1 1");
        for p in &self.data {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        s
    }

    pub fn parse_cube(text: &str) -> Result<Self> {
        let mut title = String::new();
        let mut size = None;
        let mut data = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Format(format!("cube line {}: {m}", no + 1));
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            match key {
                "TITLE" => title = line[5..].trim().trim_matches('"').to_string(),
                "LUT_3D_SIZE" => {
                    let n = words.next().and_then(|w| w.parse::<usize>().ok()).ok_or_else(|| bad("bad LUT_3D_SIZE"))?;
                    size = Some(n);
                }
                "LUT_1D_SIZE" => return Err(bad("1D LUTs are not supported")),
                "DOMAIN_MIN" | "DOMAIN_MAX" => {
                    let want = if key == "DOMAIN_MIN" { 0.0 } else { 1.0 };
                    let vals: Vec<f64> = words.map(|w| w.parse().map_err(|_| bad("bad domain"))).collect::<Result<_>>()?;
                    if vals.len() != 3 || vals.iter().any(|&v| v != want) {
                        return Err(bad("only the unit domain is supported"));
                    }
                }
                _ => {
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|w| w.parse().map_err(|_| bad("expected three numbers")))
                        .collect::<Result<_>>()?;
                    if vals.len() != 3 {
                        return Err(bad("expected three numbers"));
                    }
                    if size.is_none() {
                        return Err(bad("data before LUT_3D_SIZE"));
                    }
                    data.push([vals[0], vals[1], vals[2]]);
                }
            }
        }
        let size = size.ok_or_else(|| Error::Format("cube file has no LUT_3D_SIZE".into()))?;
        if data.len() != size.pow(3) {
            return Err(Error::Format(format!(
                "cube file declares size {size} ({} entries) but has {}",
                size.pow(3),
                data.len()
            )));
        }
        Self::new(size, data, title).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_cube(&self, path: &Path) -> Result<()> {
        crate::io_util::write_bytes_atomic(path, self.to_cube().as_bytes())
    }

    pub fn read_cube(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_cube(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Grid colors in lattice order.
pub fn lattice_inputs(n: usize) -> Vec<Rgb> {
    let s = (n.max(2) - 1) as f64;
    (0..n * n * n)
        .map(|i| [(i % n) as f64 / s, ((i / n) % n) as f64 / s, (i / (n * n)) as f64 / s])
        .collect()
}

/// Push every lattice color through the model's per-pixel map under one
/// condition vector (ignored by base-only models).
pub fn export_lut(model: &Agcm, cond: Option<&ConditionVector>, n: usize) -> Result<Lut3D> {
    if !(MIN_EXPORT_SIZE..=MAX_EXPORT_SIZE).contains(&n) {
        return Err(param_err!("lut size {n} outside [{MIN_EXPORT_SIZE}, {MAX_EXPORT_SIZE}]"));
    }
    let out = map_colors(model, cond, &lattice_inputs(n))?;
    Lut3D::new(n, out, "hdrtv agcm")
}

/// Direct network inference on a list of colors.
pub fn map_colors(model: &Agcm, cond: Option<&ConditionVector>, colors: &[Rgb]) -> Result<Vec<Rgb>> {
    if model.has_condition() && cond.is_none() {
        return Err(param_err!("model needs a condition vector"));
    }
    let m = colors.len();
    let mut data = vec![0.0f32; 3 * m];
    for (i, c) in colors.iter().enumerate() {
        for k in 0..3 {
            data[k * m + i] = c[k] as f32;
        }
    }
    let x = Tensor::from_vec([1, 3, 1, m], data)?;
    let v = cond.map(ConditionVector::to_tensor);
    let y = model.map_pixels(&x, v.as_ref())?;
    let d = y.data();
    Ok((0..m).map(|i| [d[i] as f64, d[m + i] as f64, d[2 * m + i] as f64]).collect())
}

/// Trilinear application to every pixel; the result carries the given
/// tagging and is clamped to [0, 1].
pub fn apply_lut(lut: &Lut3D, img: &EncodedImage, transfer: Transfer, gamut: Gamut, bit_depth: u8) -> Result<EncodedImage> {
    let codes: Vec<Rgb> = img
        .codes()
        .par_iter()
        .map(|&c| lut.apply_color(c).map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
        .collect();
    EncodedImage::new(img.width(), img.height(), transfer, gamut, bit_depth, codes)
}

/// ASCII PLY: position is the mapped triple, color the 8-bit source.
pub fn point_cloud_ply(lut: &Lut3D) -> String {
    let inputs = lattice_inputs(lut.size());
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment hdrtv lut lattice\n");
    let _ = writeln!(s, "element vertex {}", inputs.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    s.push_str("end_header\n");
    for (src, dst) in inputs.iter().zip(lut.data()) {
        let c = src.map(|v| (v * 255.0).round() as u8);
        let _ = writeln!(s, "{} {} {} {} {} {}", dst[0] as f32, dst[1] as f32, dst[2] as f32, c[0], c[1], c[2]);
    }
    s
}

pub fn write_point_cloud(lut: &Lut3D, path: &Path) -> Result<()> {
    crate::io_util::write_bytes_atomic(path, point_cloud_ply(lut).as_bytes())
}

/// Largest output change (max over channels) between lattice neighbours
/// whose inputs all lie in the highlight octant `[lo, 1]³`.
pub fn max_adjacent_jump(lut: &Lut3D, lo: f64) -> f64 {
    let n = lut.size();
    let s = (n - 1) as f64;
    let first = (0..n).find(|&i| i as f64 / s >= lo).unwrap_or(n);
    let mut worst = 0.0f64;
    for b in first..n {
        for g in first..n {
            for r in first..n {
                let here = lut.at(r, g, b);
                for (dr, dg, db) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                    if r + dr < n && g + dg < n && b + db < n {
                        let there = lut.at(r + dr, g + dg, b + db);
                        for k in 0..3 {
                            worst = worst.max((there[k] - here[k]).abs());
                        }
                    }
                }
            }
        }
    }
    worst
}
