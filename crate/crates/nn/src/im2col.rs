//! Patch extraction shared by convolution and transposed convolution.

use crate::real::Real;

/// Geometry of a 2-D convolution from an image of `c × h × w` to an output grid
/// of `ho × wo` with a square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output size of a forward convolution, `None` if the kernel does not fit.
    pub fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = len + 2 * pad;
        if padded < k || stride == 0 {
            return None;
        }
        Some((padded - k) / stride + 1)
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn spatial_out(&self) -> usize {
        self.ho * self.wo
    }
}

/// Fills `cols` (`rows × n*ho*wo`, row-major) with image patches.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, img: &[T], n: usize, cols: &mut [T]) {
    let l = n * g.spatial_out();
    let hw = g.h * g.w;
    debug_assert_eq!(cols.len(), g.rows() * l);
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * l..(row + 1) * l];
                for b in 0..n {
                    let src = &img[(b * g.c + c) * hw..(b * g.c + c + 1) * hw];
                    let dst = &mut dst_row[b * g.spatial_out()..(b + 1) * g.spatial_out()];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            drow.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { srow[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch columns back into `img` (the adjoint of [`im2col`]).
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], n: usize, img: &mut [T]) {
    let l = n * g.spatial_out();
    let hw = g.h * g.w;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &cols[row * l..(row + 1) * l];
                for b in 0..n {
                    let dst = &mut img[(b * g.c + c) * hw..(b * g.c + c + 1) * hw];
                    let src = &src_row[b * g.spatial_out()..(b + 1) * g.spatial_out()];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[n, c, s]` → `[c, n*s]`.
pub(crate) fn batch_to_channel_major<T: Real>(x: &[T], n: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * s..(b * c + ch + 1) * s];
            out[ch * n * s + b * s..ch * n * s + (b + 1) * s].copy_from_slice(src);
        }
    }
    out
}

/// `[c, n*s]` → `[n, c, s]`.
pub(crate) fn channel_major_to_batch<T: Real>(x: &[T], n: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ch in 0..c {
        for b in 0..n {
            let src = &x[ch * n * s + b * s..ch * n * s + (b + 1) * s];
            out[(b * c + ch) * s..(b * c + ch + 1) * s].copy_from_slice(src);
        }
    }
    out
}
