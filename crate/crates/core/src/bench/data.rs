//! Synthetic glyph pairs and IDX ingestion.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Error, Result};
use crate::image::Image;
use crate::warp::{warp_image, DisplacementField};

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Synthetic,
    Idx(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// The moving image is a deformed copy of its own fixed image.
    Same,
    /// The moving image is a deformed copy of a different base image.
    Cross,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Pairing::Same),
            "cross" => Ok(Pairing::Cross),
            other => Err(Error::Config(format!("unknown pairing `{other}` (expected same or cross)"))),
        }
    }
}

impl Pairing {
    pub fn as_str(self) -> &'static str {
        match self {
            Pairing::Same => "same",
            Pairing::Cross => "cross",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: Source,
    /// Side length of synthetic glyphs; IDX files carry their own size.
    pub image_size: usize,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    /// Number of fixed base images shared by both splits.
    pub atlases: usize,
    pub pairing: Pairing,
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub elastic_sigma: f64,
    /// Upper bound on the elastic displacement, in pixels.
    pub elastic_amplitude: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            image_size: 28,
            train_pairs: 500,
            eval_pairs: 50,
            atlases: 10,
            pairing: Pairing::Same,
            rotation_deg: 45.0,
            scale_min: 0.7,
            scale_max: 1.3,
            elastic_sigma: 4.0,
            elastic_amplitude: 6.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 4 || !self.image_size.is_multiple_of(4) {
            return bad(format!("image_size must be a positive multiple of 4, got {}", self.image_size));
        }
        if self.atlases == 0 {
            return bad("atlases must be positive".into());
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return bad(format!("rotation_deg must be non-negative, got {}", self.rotation_deg));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return bad(format!(
                "scale range [{}, {}] must be positive and ordered",
                self.scale_min, self.scale_max
            ));
        }
        if !(self.elastic_sigma > 0.0 && self.elastic_amplitude >= 0.0 && self.elastic_amplitude.is_finite()) {
            return bad("elastic_sigma must be positive and elastic_amplitude non-negative".into());
        }
        Ok(())
    }

    /// Seed of pair `index` in `split`; the two splits use disjoint seeds.
    pub fn pair_seed(&self, split: Split, index: usize) -> u64 {
        let bit = match split {
            Split::Train => 0,
            Split::Eval => 1,
        };
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (2 * index as u64 + bit)
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn bezier(p: &[(f64, f64); 4], t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    (
        a * p[0].0 + b * p[1].0 + c * p[2].0 + d * p[3].0,
        a * p[0].1 + b * p[1].1 + c * p[2].1 + d * p[3].1,
    )
}

/// A procedurally drawn glyph: a few thick Bézier strokes and an optional
/// blob on a faint textured background.
pub fn draw_glyph(size: usize, seed: u64) -> Image {
    let mut rng = stream(seed, 0x91f);
    let s = size as f64;
    let unit = s / 28.0;
    let mut ink = vec![0.0f64; size * size];
    let margin = 0.2 * s;
    let point = |rng: &mut ChaCha8Rng| (rng.random_range(margin..s - margin), rng.random_range(margin..s - margin));
    let strokes = rng.random_range(2..=3);
    for _ in 0..strokes {
        let ctrl = [point(&mut rng), point(&mut rng), point(&mut rng), point(&mut rng)];
        let width = rng.random_range(1.0..1.8) * unit;
        let level = rng.random_range(0.8..1.0);
        let samples: Vec<(f64, f64)> = (0..=48).map(|i| bezier(&ctrl, i as f64 / 48.0)).collect();
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64, y as f64);
                let d = samples
                    .iter()
                    .map(|(cx, cy)| ((px - cx).powi(2) + (py - cy).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                // soft-edged pen of half-width `width`
                let v = level * (1.0 - ((d - width) / unit).clamp(0.0, 1.0));
                ink[y * size + x] = ink[y * size + x].max(v);
            }
        }
    }
    if rng.random_bool(0.6) {
        let (cx, cy) = point(&mut rng);
        let (rx, ry) = (rng.random_range(1.5..3.5) * unit, rng.random_range(1.5..3.5) * unit);
        let level = rng.random_range(0.5..0.8);
        for y in 0..size {
            for x in 0..size {
                let r2 = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
                let v = level * (-r2).exp();
                ink[y * size + x] = ink[y * size + x].max(v);
            }
        }
    }
    // fine texture gives every NCC window some variance
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tex = gaussian_blur(&noise, size, size, 1.2 * unit);
    let peak = tex.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    Image::from_fn(size, size, |y, x| {
        let bg = 0.12 + 0.08 * tex[y * size + x] / peak;
        ink[y * size + x].max(bg) as f32
    })
}

/// Separable Gaussian blur of one `h×w` plane, clamped at the borders.
fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let o = k as isize - r;
                    let (sy, sx) = if along_x {
                        (y as isize, (x as isize + o).clamp(0, w as isize - 1))
                    } else {
                        ((y as isize + o).clamp(0, h as isize - 1), x as isize)
                    };
                    acc += kv * src[sy as usize * w + sx as usize];
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(plane, true), false)
}

/// Rotation and scaling about the image centre plus a smooth random field,
/// expressed as one displacement field.
pub fn random_deformation(h: usize, w: usize, rng: &mut ChaCha8Rng, spec: &DatasetSpec) -> DisplacementField {
    let theta = if spec.rotation_deg > 0.0 {
        rng.random_range(-spec.rotation_deg..=spec.rotation_deg).to_radians()
    } else {
        0.0
    };
    let scale = if spec.scale_max > spec.scale_min {
        rng.random_range(spec.scale_min..=spec.scale_max)
    } else {
        spec.scale_min
    };
    let amplitude = if spec.elastic_amplitude > 0.0 {
        rng.random_range(0.0..=spec.elastic_amplitude)
    } else {
        0.0
    };
    let mut elastic = [vec![0.0; h * w], vec![0.0; h * w]];
    if amplitude > 0.0 {
        for plane in &mut elastic {
            let noise: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
            *plane = gaussian_blur(&noise, h, w, spec.elastic_sigma);
        }
        let peak = elastic
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for v in elastic.iter_mut().flatten() {
            *v *= amplitude / peak;
        }
    }
    // output pixel p samples the base at c + R(−θ)(p − c)/s
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    DisplacementField::from_fn(h, w, |y, x| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = cx + (cos * dx + sin * dy) / scale;
        let sy = cy + (-sin * dx + cos * dy) / scale;
        let p = y * w + x;
        (
            (sx - x as f64 + elastic[0][p]) as f32,
            (sy - y as f64 + elastic[1][p]) as f32,
        )
    })
}

/// `fixed = base`; `moving` = base under a seeded rotation, scaling and
/// elastic warp, clamped to `[0, 1]`.
pub fn gen_synthetic_pair(base: &Image, seed: u64, spec: &DatasetSpec) -> Result<(Image, Image)> {
    contract!(base.height() > 0 && base.width() > 0, "base image is empty");
    let mut rng = stream(seed, 0xdef);
    let field = random_deformation(base.height(), base.width(), &mut rng, spec);
    let moving = warp_image(base, &field)?.clamp_unit();
    Ok((base.clone(), moving))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            message: format!("file ends inside the header field starting at byte {offset}"),
        })
}

/// Parses an IDX image file (magic 0x00000803) into `[0, 1]` images.
pub fn load_idx(path: &Path) -> Result<Vec<Image>> {
    let bytes = fs::read(path)?;
    parse_idx(&bytes)
}

pub fn parse_idx(bytes: &[u8]) -> Result<Vec<Image>> {
    let magic = be_u32(bytes, 0)?;
    if magic != 0x0000_0803 {
        return Err(Error::Format {
            offset: 0,
            message: format!("magic {magic:#010x} is not an IDX image file (expected 0x00000803)"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let plane = rows * cols;
    let need = 16 + count * plane;
    if bytes.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("payload truncated: {count} images of {rows}×{cols} need {need} bytes"),
        });
    }
    (0..count)
        .map(|i| {
            let px = &bytes[16 + i * plane..16 + (i + 1) * plane];
            Image::new(rows, cols, px.iter().map(|b| *b as f32 / 255.0).collect())
        })
        .collect()
}

/// Encodes images as an IDX image file; intensities are rounded to bytes.
pub fn encode_idx(images: &[Image]) -> Result<Vec<u8>> {
    let (rows, cols) = images.first().map_or((0, 0), Image::dims);
    contract!(
        images.iter().all(|im| im.dims() == (rows, cols)),
        "IDX images must share one size"
    );
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [0x0803u32, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        out.extend(im.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

/// Fixed/moving pairs of one split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub pairs: Vec<(Arc<Image>, Arc<Image>)>,
}

impl Dataset {
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.pairs.first().map(|(f, _)| f.dims())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn base_images(spec: &DatasetSpec) -> Result<Vec<Image>> {
    match &spec.source {
        Source::Synthetic => {
            // cross pairing draws moving images from a second, disjoint set of glyphs
            let n = spec.atlases * if spec.pairing == Pairing::Cross { 2 } else { 1 };
            Ok((0..n).map(|i| draw_glyph(spec.image_size, spec.seed.wrapping_add(i as u64))).collect())
        }
        Source::Idx(path) => {
            let images = load_idx(path)?;
            let need = spec.atlases + usize::from(spec.pairing == Pairing::Cross);
            if images.len() < need {
                return Err(Error::Config(format!(
                    "{} holds {} images; {need} needed for {} atlases",
                    path.display(),
                    images.len(),
                    spec.atlases
                )));
            }
            if let Some(im) = images.first() {
                let (h, w) = im.dims();
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::Config(format!("IDX images are {h}×{w}; sides must be multiples of 4")));
                }
            }
            Ok(images)
        }
    }
}

/// Builds the pairs of `split`. Pair `i` uses atlas `i mod atlases` as its
/// fixed image; its moving image deforms that atlas (`same`) or another
/// base image (`cross`).
pub fn build_dataset(spec: &DatasetSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let bases = base_images(spec)?;
    let n = match split {
        Split::Train => spec.train_pairs,
        Split::Eval => spec.eval_pairs,
    };
    let atlases: Vec<Arc<Image>> = bases[..spec.atlases].iter().cloned().map(Arc::new).collect();
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let seed = spec.pair_seed(split, i);
        let a = i % spec.atlases;
        let fixed = Arc::clone(&atlases[a]);
        let source = match spec.pairing {
            Pairing::Same => &*fixed,
            Pairing::Cross => {
                let mut j = stream(seed, 0xc05).random_range(0..bases.len() - 1);
                if j >= a {
                    j += 1;
                }
                &bases[j]
            }
        };
        let (_, moving) = gen_synthetic_pair(source, seed, spec)?;
        pairs.push((fixed, Arc::new(moving)));
    }
    Ok(Dataset { pairs })
}
