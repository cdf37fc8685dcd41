//! Raw forward/backward loops behind the graph operations.

use rayon::prelude::*;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.k * self.k
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let po = g.oh * g.ow;
    for c in 0..g.in_ch {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * po..(row + 1) * po];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let po = g.oh * g.ow;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * po..(row + 1) * po];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            line[ix as usize] = line[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    g: &ConvGeom,
    batch: usize,
) -> Vec<T> {
    let in_per = g.in_ch * g.h * g.w;
    let po = g.oh * g.ow;
    let out_per = g.out_ch * po;
    let kk = g.col_rows();
    let mut out = vec![T::zero(); batch * out_per];
    out.par_chunks_mut(out_per.max(1))
        .enumerate()
        .for_each(|(b, dst)| {
            let xb = &x[b * in_per..(b + 1) * in_per];
            if g.pointwise() {
                T::gemm(
                    g.out_ch,
                    g.in_ch,
                    po,
                    T::one(),
                    (weight, kk as isize, 1),
                    (xb, po as isize, 1),
                    T::zero(),
                    (dst, po as isize, 1),
                );
            } else {
                let mut col = vec![T::zero(); kk * po];
                im2col(xb, g, &mut col);
                T::gemm(
                    g.out_ch,
                    kk,
                    po,
                    T::one(),
                    (weight, kk as isize, 1),
                    (&col, po as isize, 1),
                    T::zero(),
                    (dst, po as isize, 1),
                );
            }
            for (o, row) in dst.chunks_mut(po.max(1)).enumerate() {
                let bo = bias[o];
                for v in row {
                    *v = *v + bo;
                }
            }
        });
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

/// Per-sample partial weight gradients are reduced in batch order, so the
/// result does not depend on how many worker threads ran.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    g: &ConvGeom,
    batch: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let in_per = g.in_ch * g.h * g.w;
    let po = g.oh * g.ow;
    let out_per = g.out_ch * po;
    let kk = g.col_rows();
    let (need_x, need_w, need_b) = need;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let xb = &x[b * in_per..(b + 1) * in_per];
            let gb = &dout[b * out_per..(b + 1) * out_per];
            let col = if g.pointwise() {
                None
            } else {
                let mut col = vec![T::zero(); kk * po];
                im2col(xb, g, &mut col);
                Some(col)
            };
            let cols: &[T] = col.as_deref().unwrap_or(xb);
            let dw = need_w.then(|| {
                let mut dw = vec![T::zero(); g.out_ch * kk];
                // dW = dOut (O×P) · colᵀ (P×KK)
                T::gemm(
                    g.out_ch,
                    po,
                    kk,
                    T::one(),
                    (gb, po as isize, 1),
                    (cols, 1, po as isize),
                    T::zero(),
                    (&mut dw, kk as isize, 1),
                );
                dw
            });
            let dx = need_x.then(|| {
                // dcol = Wᵀ (KK×O) · dOut (O×P)
                let mut dcol = vec![T::zero(); kk * po];
                T::gemm(
                    kk,
                    g.out_ch,
                    po,
                    T::one(),
                    (weight, 1, kk as isize),
                    (gb, po as isize, 1),
                    T::zero(),
                    (&mut dcol, po as isize, 1),
                );
                if g.pointwise() {
                    dcol
                } else {
                    let mut dx = vec![T::zero(); in_per];
                    col2im(&dcol, g, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let mut dx_all = need_x.then(|| Vec::with_capacity(batch * in_per));
    let mut dw_all = need_w.then(|| vec![T::zero(); g.out_ch * kk]);
    for (dx, dw) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
            for (a, v) in all.iter_mut().zip(dw) {
                *a = *a + v;
            }
        }
    }
    let db = need_b.then(|| {
        let mut db = vec![T::zero(); g.out_ch];
        for b in 0..batch {
            for (o, acc) in db.iter_mut().enumerate() {
                let row = &dout[b * out_per + o * po..b * out_per + (o + 1) * po];
                *acc = *acc + row.iter().copied().sum::<T>();
            }
        }
        db
    });
    ConvGrads {
        dx: dx_all,
        dw: dw_all,
        db,
    }
}
