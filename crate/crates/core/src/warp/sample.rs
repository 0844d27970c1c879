//! Bilinear resampling with clamp-to-border boundary handling.

use crate::error::{contract, Result};
use crate::substrate::{CustomOp, Graph, Real, Tensor, Var};

/// Bilinear stencil of one output pixel.
#[derive(Clone, Copy)]
struct Stencil<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// Whether the sample coordinate lies inside the image along each axis.
    free_x: bool,
    free_y: bool,
}

#[inline]
fn stencil<T: Real>(h: usize, w: usize, y: usize, x: usize, dx: T, dy: T) -> Stencil<T> {
    let max_x = T::lit((w - 1) as f64);
    let max_y = T::lit((h - 1) as f64);
    let sx = T::lit(x as f64) + dx;
    let sy = T::lit(y as f64) + dy;
    let free_x = sx >= T::zero() && sx <= max_x;
    let free_y = sy >= T::zero() && sy <= max_y;
    let cx = sx.max(T::zero()).min(max_x);
    let cy = sy.max(T::zero()).min(max_y);
    let fx0 = cx.floor();
    let fy0 = cy.floor();
    let x0 = fx0.as_f64() as usize;
    let y0 = fy0.as_f64() as usize;
    Stencil {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        fx: cx - fx0,
        fy: cy - fy0,
        free_x,
        free_y,
    }
}

fn check_dims(image: &[usize], field: &[usize]) -> Result<(usize, usize, usize)> {
    contract!(image.len() == 3, "image must be C×H×W, got {image:?}");
    contract!(
        field.len() == 3 && field[0] == 2,
        "displacement field must be 2×H×W, got {field:?}"
    );
    contract!(
        image[1..] == field[1..],
        "field dimensions {:?} do not match image {:?}",
        &field[1..],
        &image[1..]
    );
    Ok((image[0], image[1], image[2]))
}

fn sample_forward<T: Real>(c: usize, h: usize, w: usize, image: &[T], field: &[T]) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); c * plane];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let s = stencil(h, w, y, x, field[p], field[plane + p]);
            let one = T::one();
            for ch in 0..c {
                let img = &image[ch * plane..(ch + 1) * plane];
                let top = (one - s.fx) * img[s.y0 * w + s.x0] + s.fx * img[s.y0 * w + s.x1];
                let bot = (one - s.fx) * img[s.y1 * w + s.x0] + s.fx * img[s.y1 * w + s.x1];
                out[ch * plane + p] = (one - s.fy) * top + s.fy * bot;
            }
        }
    }
    out
}

/// `output(p) = image(p + field(p))` with bilinear interpolation; sample
/// coordinates are clamped to the image border.
pub fn grid_sample<T: Real>(image: &Tensor<T>, field: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = check_dims(image.shape(), field.shape())?;
    contract!(field.all_finite(), "displacement field has non-finite entries");
    let out = sample_forward(c, h, w, image.data(), field.data());
    Tensor::new(&[c, h, w], out)
}

struct GridSampleOp {
    c: usize,
    h: usize,
    w: usize,
}

impl<T: Real> CustomOp<T> for GridSampleOp {
    fn name(&self) -> &'static str {
        "grid_sample_bilinear"
    }

    fn regions(&self, inputs: &[&[T]], out: &mut Vec<u64>) {
        let (h, w) = (self.h, self.w);
        let field = inputs[1];
        for p in 0..h * w {
            let s = stencil(h, w, p / w, p % w, field[p], field[h * w + p]);
            out.push(((s.y0 * w + s.x0) as u64) << 2 | (s.free_x as u64) << 1 | s.free_y as u64);
        }
    }

    fn backward(&self, inputs: &[&[T]], _output: &[T], g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (c, h, w) = (self.c, self.h, self.w);
        let plane = h * w;
        let (image, field) = (inputs[0], inputs[1]);
        let (gi, gf) = grads.split_at_mut(1);
        let (gi, gf) = (&mut gi[0], &mut gf[0]);
        let one = T::one();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let s = stencil(h, w, y, x, field[p], field[plane + p]);
                let (mut ddx, mut ddy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let go = g[ch * plane + p];
                    let base = ch * plane;
                    if let Some(gi) = gi.as_mut() {
                        gi[base + s.y0 * w + s.x0] += go * (one - s.fy) * (one - s.fx);
                        gi[base + s.y0 * w + s.x1] += go * (one - s.fy) * s.fx;
                        gi[base + s.y1 * w + s.x0] += go * s.fy * (one - s.fx);
                        gi[base + s.y1 * w + s.x1] += go * s.fy * s.fx;
                    }
                    if gf.is_some() {
                        let img = &image[base..base + plane];
                        let (v00, v01) = (img[s.y0 * w + s.x0], img[s.y0 * w + s.x1]);
                        let (v10, v11) = (img[s.y1 * w + s.x0], img[s.y1 * w + s.x1]);
                        if s.free_x {
                            ddx += go * ((one - s.fy) * (v01 - v00) + s.fy * (v11 - v10));
                        }
                        if s.free_y {
                            ddy += go * ((one - s.fx) * (v10 - v00) + s.fx * (v11 - v01));
                        }
                    }
                }
                if let Some(gf) = gf.as_mut() {
                    gf[p] += ddx;
                    gf[plane + p] += ddy;
                }
            }
        }
    }
}

/// Differentiable [`grid_sample`] recorded on a graph.
pub fn grid_sample_var<T: Real>(g: &mut Graph<'_, T>, image: Var, field: Var) -> Result<Var> {
    let (c, h, w) = check_dims(g.shape(image), g.shape(field))?;
    contract!(
        g.value(field).iter().all(|v| v.is_finite()),
        "displacement field has non-finite entries"
    );
    let out = sample_forward(c, h, w, g.value(image), g.value(field));
    g.custom(&[image, field], &[c, h, w], out, Box::new(GridSampleOp { c, h, w }))
}
