//! Grayscale images and 8-bit PGM export.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::substrate::Tensor;

/// H×W grayscale intensities, stored as a 1×H×W tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Tensor<f32>);

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        contract!(height > 0 && width > 0, "image must be non-empty, got {height}×{width}");
        Ok(Self(Tensor::new(&[1, height, width], data)?))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(&[1, height, width]))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        Self(Tensor::from_fn(&[1, height, width], |i| f(i / width, i % width)))
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        contract!(
            t.shape().len() == 3 && t.shape()[0] == 1,
            "image tensor must be 1×H×W, got {:?}",
            t.shape()
        );
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

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.0.data_mut()
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.0.data()[y * self.width() + x]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn clamp_unit(mut self) -> Self {
        for v in self.0.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

/// Writes an 8-bit binary PGM (P5, maxval 255). Values are clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    contract!(
        values.len() == height * width,
        "pgm payload has {} values for {height}×{width}",
        values.len()
    );
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a binary P5 PGM with maxval ≤ 255 into `[0, 1]` intensities.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format {
                offset: pos,
                message: "truncated PGM header".into(),
            });
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    pos += 1;
    if fields[0].1 != "P5" {
        return Err(Error::Format {
            offset: 0,
            message: format!("expected P5 magic, found `{}`", fields[0].1),
        });
    }
    let mut nums = [0usize; 3];
    for (i, (off, s)) in fields[1..].iter().enumerate() {
        nums[i] = s.parse().map_err(|_| Error::Format {
            offset: *off,
            message: format!("invalid PGM header field `{s}`"),
        })?;
    }
    let [width, height, maxval] = nums;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format {
            offset: fields[3].0,
            message: format!("unsupported maxval {maxval}"),
        });
    }
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("PGM payload truncated: need {n} bytes"),
        });
    }
    let data = bytes[pos..pos + n].iter().map(|b| *b as f32 / maxval as f32).collect();
    Image::new(height, width, data)
}
