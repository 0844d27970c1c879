//! Sequential dense kernels behind the graph ops.
//!
//! Every reduction runs in a fixed loop order, so results are bitwise
//! reproducible for a given input.

use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.k) / self.stride + 1
    }

    /// Output columns `ox` whose input column `ox*stride + kx - padding` is in bounds.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let (p, w) = (self.padding, self.w);
        let ow = self.out_w();
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        // largest ox with ox*s + kx - p <= w - 1
        let limit = w - 1 + p;
        let hi = if kx > limit { 0 } else { ((limit - kx) / s + 1).min(ow) };
        (lo, hi.max(lo))
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

impl ConvGeometry {
    /// Rows of the unfolded input: one per (input channel, ky, kx).
    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// Unfolds `input` into a `patch_len × (out_h·out_w)` matrix; padded taps are zero.
    fn im2col<T: Real>(&self, input: &[T]) -> Vec<T> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let n = oh * ow;
        let (k, s, p) = (self.k, self.stride, self.padding);
        let plane = self.h * self.w;
        let mut col = vec![T::zero(); self.patch_len() * n];
        for ci in 0..self.c_in {
            let in_c = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * n..][..n];
                    let (lo, hi) = self.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let Some(iy) = self.in_row(oy, ky) else { continue };
                        let in_row = &in_c[iy * self.w..(iy + 1) * self.w];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        let off = lo * s + kx - p;
                        for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = in_row[off + j * s];
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Self::im2col`]: scatters columns back onto `grad_in`.
    fn col2im<T: Real>(&self, col: &[T], grad_in: &mut [T]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let n = oh * ow;
        let (k, s, p) = (self.k, self.stride, self.padding);
        let plane = self.h * self.w;
        for ci in 0..self.c_in {
            let gin_c = &mut grad_in[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * n..][..n];
                    let (lo, hi) = self.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let Some(iy) = self.in_row(oy, ky) else { continue };
                        let gin_row = &mut gin_c[iy * self.w..(iy + 1) * self.w];
                        let src = &row[oy * ow..(oy + 1) * ow];
                        let off = lo * s + kx - p;
                        for (j, g) in src[lo..hi].iter().enumerate() {
                            gin_row[off + j * s] += *g;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(geo: &ConvGeometry, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let n = geo.out_h() * geo.out_w();
    let mut out = vec![T::zero(); geo.c_out * n];
    for (co, chunk) in out.chunks_mut(n).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[co]);
    }
    let col = geo.im2col(input);
    T::gemm_acc(geo.c_out, geo.patch_len(), n, kernel, false, &col, false, &mut out);
    out
}

/// Accumulates the input gradient of a convolution into `grad_in`.
pub fn conv2d_backward_input<T: Real>(geo: &ConvGeometry, kernel: &[T], grad_out: &[T], grad_in: &mut [T]) {
    let n = geo.out_h() * geo.out_w();
    let mut col = vec![T::zero(); geo.patch_len() * n];
    T::gemm_acc(geo.patch_len(), geo.c_out, n, kernel, true, grad_out, false, &mut col);
    geo.col2im(&col, grad_in);
}

/// Accumulates kernel and bias gradients of a convolution.
pub fn conv2d_backward_params<T: Real>(
    geo: &ConvGeometry,
    input: &[T],
    grad_out: &[T],
    grad_kernel: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let n = geo.out_h() * geo.out_w();
    if let Some(gb) = grad_bias {
        for (co, g) in grad_out.chunks(n).enumerate() {
            let mut acc = T::zero();
            for v in g {
                acc += *v;
            }
            gb[co] += acc;
        }
    }
    let Some(gk) = grad_kernel else { return };
    let col = geo.im2col(input);
    T::gemm_acc(geo.c_out, n, geo.patch_len(), grad_out, false, &col, true, gk);
}

pub fn linear_forward<T: Real>(input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let n = input.len();
    bias.iter()
        .enumerate()
        .map(|(m, b)| {
            let row = &weight[m * n..(m + 1) * n];
            let mut acc = *b;
            for (w, x) in row.iter().zip(input) {
                acc += *w * *x;
            }
            acc
        })
        .collect()
}

pub fn upsample_forward<T: Real>(input: &[T], c: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let src = &input[(ch * h + oy / f) * w..(ch * h + oy / f + 1) * w];
            let dst = &mut out[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / f];
            }
        }
    }
    out
}

pub fn upsample_backward<T: Real>(grad_out: &[T], c: usize, h: usize, w: usize, f: usize, grad_in: &mut [T]) {
    let (oh, ow) = (h * f, w * f);
    for ch in 0..c {
        for oy in 0..oh {
            let g_row = &grad_out[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
            let dst = &mut grad_in[(ch * h + oy / f) * w..(ch * h + oy / f + 1) * w];
            for (ox, g) in g_row.iter().enumerate() {
                dst[ox / f] += *g;
            }
        }
    }
}
