//! Local normalized cross-correlation and the total-variation penalty.

use crate::error::{contract, Result};
use crate::substrate::{CustomOp, Graph, Real, Tensor, Var};

/// Stabilizer added to the variance product of every window.
pub const NCC_EPS: f64 = 1e-5;
pub const NCC_WINDOW: usize = 9;

/// Number of in-bounds pixels covered by the window centred at each pixel.
fn window_counts(h: usize, w: usize, window: usize) -> Vec<f64> {
    let r = window / 2;
    let span = |i: usize, n: usize| (i + r).min(n - 1) - i.saturating_sub(r) + 1;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push((span(y, h) * span(x, w)) as f64);
        }
    }
    out
}

/// Mean over pixels of the squared local correlation coefficient between
/// `fixed` and `warped` (both 1×H×W), windows clipped at the border:
/// `(Σ(f−f̄)(m−m̄))² / (Σ(f−f̄)²·Σ(m−m̄)² + ε)`.
pub fn ncc_local_var<T: Real>(g: &mut Graph<'_, T>, fixed: Var, warped: Var, window: usize) -> Result<Var> {
    let fs = g.shape(fixed).to_vec();
    contract!(fs.len() == 3 && fs[0] == 1, "ncc expects 1×H×W images, got {fs:?}");
    contract!(
        g.shape(warped) == fs.as_slice(),
        "ncc shape mismatch {:?} vs {:?}",
        fs,
        g.shape(warped)
    );
    let (h, w) = (fs[1], fs[2]);
    contract!(
        window % 2 == 1 && window >= 3 && window <= h.min(w),
        "ncc window must be odd, ≥ 3 and ≤ {}, got {window}",
        h.min(w)
    );
    let pad = window / 2;
    let ones = g.constant(&[1, 1, window, window], vec![T::one(); window * window])?;
    let zero = g.constant(&[1], vec![T::zero()])?;
    let inv_n = g.constant(
        &fs,
        window_counts(h, w, window).into_iter().map(|n| T::lit(1.0 / n)).collect(),
    )?;
    let box_sum = |g: &mut Graph<'_, T>, v: Var| g.conv2d(v, ones, zero, 1, pad);

    let ff = g.mul(fixed, fixed)?;
    let mm = g.mul(warped, warped)?;
    let fm = g.mul(fixed, warped)?;
    let sf = box_sum(g, fixed)?;
    let sm = box_sum(g, warped)?;
    let sff = box_sum(g, ff)?;
    let smm = box_sum(g, mm)?;
    let sfm = box_sum(g, fm)?;

    // centred second moments over each clipped window
    let sf_sm = g.mul(sf, sm)?;
    let sf_sm_n = g.mul(sf_sm, inv_n)?;
    let cross = g.sub(sfm, sf_sm_n)?;
    let sf2 = g.square(sf);
    let sf2_n = g.mul(sf2, inv_n)?;
    let var_f = g.sub(sff, sf2_n)?;
    let sm2 = g.square(sm);
    let sm2_n = g.mul(sm2, inv_n)?;
    let var_m = g.sub(smm, sm2_n)?;

    let num = g.square(cross);
    let vv = g.mul(var_f, var_m)?;
    let den = g.add_scalar(vv, T::lit(NCC_EPS));
    let cc = g.div(num, den)?;
    Ok(g.mean(cc))
}

/// Plain evaluation of [`ncc_local_var`].
pub fn ncc_local<T: Real>(fixed: &Tensor<T>, warped: &Tensor<T>, window: usize) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.constant_tensor(fixed);
    let m = g.constant_tensor(warped);
    let v = ncc_local_var(&mut g, f, m, window)?;
    Ok(g.scalar(v).as_f64())
}

struct TvOp {
    c: usize,
    h: usize,
    w: usize,
    count: usize,
}

impl TvOp {
    fn count(c: usize, h: usize, w: usize) -> usize {
        c * (h * w.saturating_sub(1) + h.saturating_sub(1) * w)
    }

    fn forward<T: Real>(&self, f: &[T]) -> T {
        let (h, w) = (self.h, self.w);
        let mut acc = T::zero();
        for ch in 0..self.c {
            let p = &f[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let v = p[y * w + x];
                    if x + 1 < w {
                        let d = p[y * w + x + 1] - v;
                        acc += d * d;
                    }
                    if y + 1 < h {
                        let d = p[(y + 1) * w + x] - v;
                        acc += d * d;
                    }
                }
            }
        }
        if self.count == 0 {
            T::zero()
        } else {
            acc / T::lit(self.count as f64)
        }
    }
}

impl<T: Real> CustomOp<T> for TvOp {
    fn name(&self) -> &'static str {
        "tv_penalty"
    }

    fn backward(&self, inputs: &[&[T]], _output: &[T], g: &[T], grads: &mut [Option<Vec<T>>]) {
        let Some(gf) = grads[0].as_mut() else { return };
        if self.count == 0 {
            return;
        }
        let (h, w) = (self.h, self.w);
        let scale = g[0] * T::lit(2.0 / self.count as f64);
        for ch in 0..self.c {
            let base = ch * h * w;
            let p = &inputs[0][base..base + h * w];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if x + 1 < w {
                        let d = scale * (p[i + 1] - p[i]);
                        gf[base + i + 1] += d;
                        gf[base + i] -= d;
                    }
                    if y + 1 < h {
                        let d = scale * (p[i + w] - p[i]);
                        gf[base + i + w] += d;
                        gf[base + i] -= d;
                    }
                }
            }
        }
    }
}

/// Mean of squared forward differences over both channels and both axes.
pub fn tv_penalty_var<T: Real>(g: &mut Graph<'_, T>, field: Var) -> Result<Var> {
    let s = g.shape(field).to_vec();
    contract!(s.len() == 3, "tv penalty expects C×H×W, got {s:?}");
    let (c, h, w) = (s[0], s[1], s[2]);
    let op = TvOp {
        c,
        h,
        w,
        count: TvOp::count(c, h, w),
    };
    let v = op.forward(g.value(field));
    g.custom(&[field], &[1], vec![v], Box::new(op))
}

pub fn tv_penalty<T: Real>(field: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.constant_tensor(field);
    let v = tv_penalty_var(&mut g, f)?;
    Ok(g.scalar(v).as_f64())
}
