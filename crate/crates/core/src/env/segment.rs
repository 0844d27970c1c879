use crate::error::{contract, Result};
use crate::image::Image;
use crate::substrate::Tensor;
use crate::warp::{grid_sample, DisplacementField};

/// Number of intensity clusters used for pseudo-labels.
pub const NUM_LABELS: usize = 3;
const MAX_ROUNDS: usize = 100;

/// Per-pixel cluster labels; label ids ascend with cluster intensity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        contract!(
            labels.len() == height * width,
            "{} labels for a {height}×{width} map",
            labels.len()
        );
        contract!(
            labels.iter().all(|&l| (l as usize) < NUM_LABELS),
            "labels must be below {NUM_LABELS}"
        );
        Ok(Self { height, width, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Gray levels spread over `[0, 1]` for PGM export.
    pub fn to_gray(&self) -> Vec<f32> {
        let top = (NUM_LABELS - 1) as f32;
        self.labels.iter().map(|&l| l as f32 / top).collect()
    }
}

fn nearest(v: f32, centers: &[f32]) -> usize {
    // strict comparison keeps the lower label on exact ties
    let mut best = 0;
    let mut best_d = (v - centers[0]).abs();
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = (v - c).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lloyd's algorithm on pixel intensities with `k` centres seeded at the
/// `(2i+1)/2k` quantiles.
///
/// Tied assignments always go to the lower-intensity centre, so the result
/// does not depend on `seed`; the parameter is kept for interface stability.
/// Coincident or empty clusters are merged away and the survivors relabelled
/// by ascending centre.
pub fn kmeans_segment(image: &Image, k: usize, _seed: u64) -> Result<SegmentationMap> {
    contract!((1..=NUM_LABELS).contains(&k), "k must be in 1..={NUM_LABELS}, got {k}");
    let values = image.data();
    contract!(!values.is_empty(), "cannot segment an empty image");
    contract!(values.iter().all(|v| v.is_finite()), "image has non-finite intensities");
    let n = values.len();

    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let mut centers: Vec<f32> = (0..k)
        .map(|i| {
            let q = (2 * i + 1) as f64 / (2 * k) as f64;
            sorted[((q * n as f64) as usize).min(n - 1)]
        })
        .collect();
    centers.dedup();

    let mut assign: Vec<usize> = values.iter().map(|&v| nearest(v, &centers)).collect();
    for _ in 0..MAX_ROUNDS {
        let mut sums = vec![0.0f64; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (&v, &a) in values.iter().zip(&assign) {
            sums[a] += v as f64;
            counts[a] += 1;
        }
        for (c, (s, m)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if *m > 0 {
                *c = (s / *m as f64) as f32;
            }
        }
        let next: Vec<usize> = values.iter().map(|&v| nearest(v, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    // drop empty clusters, then rank the rest by centre
    let mut used: Vec<(f32, usize)> = (0..centers.len())
        .filter(|i| assign.contains(i))
        .map(|i| (centers[i], i))
        .collect();
    used.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut relabel = vec![0u8; centers.len()];
    for (rank, (_, i)) in used.iter().enumerate() {
        relabel[*i] = rank as u8;
    }
    let labels = assign.iter().map(|&a| relabel[a]).collect();
    SegmentationMap::new(image.height(), image.width(), labels)
}

/// Uniform mean over all labels of `2|A∩B| / (|A|+|B|)`; a label absent
/// from both maps scores 1.
pub fn dice(u1: &SegmentationMap, u2: &SegmentationMap) -> Result<f64> {
    contract!(
        u1.dims() == u2.dims(),
        "dice of maps with different dimensions {:?} vs {:?}",
        u1.dims(),
        u2.dims()
    );
    let mut inter = [0usize; NUM_LABELS];
    let mut size1 = [0usize; NUM_LABELS];
    let mut size2 = [0usize; NUM_LABELS];
    for (&a, &b) in u1.labels.iter().zip(&u2.labels) {
        size1[a as usize] += 1;
        size2[b as usize] += 1;
        if a == b {
            inter[a as usize] += 1;
        }
    }
    let total: f64 = (0..NUM_LABELS)
        .map(|l| {
            let denom = size1[l] + size2[l];
            if denom == 0 {
                1.0
            } else {
                2.0 * inter[l] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / NUM_LABELS as f64)
}

/// Warps a label map: one-hot channels are resampled bilinearly and each
/// pixel takes the strongest channel, preferring the smaller label on ties.
pub fn warp_labels(u: &SegmentationMap, field: &DisplacementField) -> Result<SegmentationMap> {
    contract!(
        u.dims() == field.dims(),
        "label map {:?} and field {:?} differ in size",
        u.dims(),
        field.dims()
    );
    let (h, w) = u.dims();
    let plane = h * w;
    let onehot = Tensor::<f64>::from_fn(&[NUM_LABELS, h, w], |i| {
        if u.labels[i % plane] as usize == i / plane { 1.0 } else { 0.0 }
    });
    let warped = grid_sample(&onehot, &field.cast::<f64>().into_tensor())?;
    let d = warped.data();
    let labels = (0..plane)
        .map(|p| {
            let mut best = 0;
            for l in 1..NUM_LABELS {
                if d[l * plane + p] > d[best * plane + p] {
                    best = l;
                }
            }
            best as u8
        })
        .collect();
    SegmentationMap::new(h, w, labels)
}
