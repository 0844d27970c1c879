use crate::error::{contract, Result};
use crate::substrate::{Real, Tensor};

/// Per-pixel offsets (channel 0 = x, channel 1 = y) in pixel units, added to
/// the identity sampling grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField<T: Real = f32>(Tensor<T>);

impl<T: Real> DisplacementField<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(&[2, height, width]))
    }

    /// A uniform translation by `(dx, dy)` pixels.
    pub fn constant(height: usize, width: usize, dx: T, dy: T) -> Self {
        let plane = height * width;
        Self(Tensor::from_fn(&[2, height, width], |i| if i < plane { dx } else { dy }))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let plane = height * width;
        let mut data = vec![T::zero(); 2 * plane];
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                data[y * width + x] = dx;
                data[plane + y * width + x] = dy;
            }
        }
        Self(Tensor::new(&[2, height, width], data).expect("shape matches"))
    }

    /// Wraps a 2×H×W tensor; entries must be finite.
    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        contract!(
            t.shape().len() == 3 && t.shape()[0] == 2,
            "displacement field must be 2×H×W, got {:?}",
            t.shape()
        );
        if !t.all_finite() {
            return Err(crate::error::Error::Contract(
                "displacement field has non-finite entries".into(),
            ));
        }
        Ok(Self(t))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn dx(&self) -> &[T] {
        &self.0.data()[..self.height() * self.width()]
    }

    pub fn dy(&self) -> &[T] {
        &self.0.data()[self.height() * self.width()..]
    }

    pub fn max_abs(&self) -> T {
        self.0.data().iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Per-pixel displacement magnitude √(dx² + dy²).
    pub fn magnitude(&self) -> Vec<T> {
        self.dx()
            .iter()
            .zip(self.dy())
            .map(|(x, y)| (*x * *x + *y * *y).sqrt())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> DisplacementField<U> {
        DisplacementField(self.0.cast())
    }
}
