//! Displacement-field geometry: warping, composition, similarity and
//! smoothness.

mod field;
mod sample;
mod similarity;

pub use field::DisplacementField;
pub use sample::{grid_sample, grid_sample_var};
pub use similarity::{ncc_local, ncc_local_var, tv_penalty, tv_penalty_var, NCC_EPS, NCC_WINDOW};

use crate::error::{contract, Result};
use crate::image::Image;
use crate::substrate::{Graph, Real, Var};

/// `prev + action ∘ prev`: the action field resampled at the locations
/// displaced by `prev`, then added to `prev`.
pub fn compose_var<T: Real>(g: &mut Graph<'_, T>, action: Var, prev: Var) -> Result<Var> {
    contract!(
        g.shape(action) == g.shape(prev),
        "compose: field dimensions differ {:?} vs {:?}",
        g.shape(action),
        g.shape(prev)
    );
    let resampled = grid_sample_var(g, action, prev)?;
    g.add(prev, resampled)
}

pub fn compose_fields<T: Real>(action: &DisplacementField<T>, prev: &DisplacementField<T>) -> Result<DisplacementField<T>> {
    contract!(
        action.dims() == prev.dims(),
        "compose: field dimensions differ {:?} vs {:?}",
        action.dims(),
        prev.dims()
    );
    let resampled = grid_sample(action.tensor(), prev.tensor())?;
    let sum: Vec<T> = prev
        .tensor()
        .data()
        .iter()
        .zip(resampled.data())
        .map(|(a, b)| *a + *b)
        .collect();
    let (h, w) = prev.dims();
    DisplacementField::from_tensor(crate::substrate::Tensor::new(&[2, h, w], sum)?)
}

/// Warps an image by a field.
pub fn warp_image(image: &Image, field: &DisplacementField) -> Result<Image> {
    Image::from_tensor(grid_sample(image.tensor(), field.tensor())?)
}

/// Window actually used for an H×W image: the default, shrunk to the
/// largest odd size that fits.
pub fn ncc_window_for(height: usize, width: usize) -> usize {
    let m = height.min(width);
    NCC_WINDOW.min(if m.is_multiple_of(2) { m.saturating_sub(1) } else { m })
}

/// Windowed NCC of two images with the default window.
pub fn image_ncc(fixed: &Image, warped: &Image) -> Result<f64> {
    ncc_local(fixed.tensor(), warped.tensor(), ncc_window_for(fixed.height(), fixed.width()))
}

#[cfg(test)]
mod tests;
