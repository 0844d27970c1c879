use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::substrate::{gradient_check, GradCheckOptions, ScalarFn, Tensor};

fn noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
}

fn impulse(h: usize, w: usize, y: usize, x: usize) -> Image {
    Image::from_fn(h, w, |yy, xx| if (yy, xx) == (y, x) { 1.0 } else { 0.0 })
}

fn centroid(img: &Image) -> (f64, f64) {
    let (mut m, mut cy, mut cx) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(y, x) as f64;
            m += v;
            cy += v * y as f64;
            cx += v * x as f64;
        }
    }
    (cy / m, cx / m)
}

#[test]
fn zero_field_is_exact_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = noise(&mut rng, 9, 13);
    let out = warp_image(&img, &DisplacementField::zeros(9, 13)).unwrap();
    assert_eq!(out.data(), img.data());
}

#[test]
fn unit_shift_of_ramp_replicates_border() {
    let img = Image::from_fn(4, 4, |y, x| (y * 4 + x) as f32);
    let out = warp_image(&img, &DisplacementField::constant(4, 4, 1.0, 0.0)).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            assert_eq!(out.get(y, x), img.get(y, (x + 1).min(3)));
        }
    }
}

#[test]
fn non_finite_field_is_rejected() {
    let img = Tensor::<f32>::zeros(&[1, 3, 3]);
    let mut f = Tensor::zeros(&[2, 3, 3]);
    f.data_mut()[4] = f32::NAN;
    assert!(grid_sample(&img, &f).is_err());
    assert!(DisplacementField::from_tensor(f).is_err());
}

struct SampleSum;

impl ScalarFn for SampleSum {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, x: &[Var]) -> Result<Var> {
        let y = grid_sample_var(g, x[0], x[1])?;
        Ok(g.sum(y))
    }
}

#[test]
fn field_gradient_matches_finite_differences_at_interior_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, w) = (7, 8);
    let img = Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0));
    let field = Tensor::from_fn(&[2, h, w], |_| {
        let v: f64 = rng.random_range(0.1..0.9);
        if rng.random_bool(0.5) { v } else { -v }
    });
    // interior: sample points stay inside the image
    let plane = h * w;
    let mut field = field;
    for i in 0..2 * plane {
        let p = i % plane;
        let (base, max) = if i < plane { (p % w, w - 1) } else { (p / w, h - 1) };
        let s = base as f64 + field.data()[i];
        if s < 0.0 || s > max as f64 {
            field.data_mut()[i] = -field.data()[i];
        }
    }
    let r = gradient_check(&SampleSum, &[img, field], &GradCheckOptions { tolerance: 1e-4, ..Default::default() }).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn compose_base_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = DisplacementField::from_fn(6, 7, |_, _| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
    let zero = DisplacementField::zeros(6, 7);
    assert_eq!(compose_fields(&a, &zero).unwrap(), a);
    assert_eq!(compose_fields(&zero, &a).unwrap(), a);
    assert!(compose_fields(&a, &DisplacementField::zeros(6, 6)).is_err());
}

#[test]
fn two_translations_compose_to_their_sum() {
    let (h, w) = (24, 24);
    let u = DisplacementField::constant(h, w, 1.25, -0.5);
    let v = DisplacementField::constant(h, w, -0.75, 2.0);
    let uv = compose_fields(&v, &u).unwrap();
    assert_eq!(uv, DisplacementField::constant(h, w, 0.5, 1.5));
}

#[test]
fn integer_translations_warp_impulses_exactly_like_sequential_warps() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (h, w) = (20, 20);
    for _ in 0..20 {
        let mut step = || (rng.random_range(-3i32..=3) as f32, rng.random_range(-3i32..=3) as f32);
        let (u, v) = (step(), step());
        let img = impulse(h, w, 10, 10);
        let fu = DisplacementField::constant(h, w, u.0, u.1);
        let fv = DisplacementField::constant(h, w, v.0, v.1);
        let omega = compose_fields(&fv, &fu).unwrap();
        let once = warp_image(&img, &omega).unwrap();
        let seq = warp_image(&warp_image(&img, &fu).unwrap(), &fv).unwrap();
        assert_eq!(once.data(), seq.data());
    }
}

#[test]
fn fractional_translations_move_impulses_like_sequential_warps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w) = (24, 24);
    for _ in 0..20 {
        let mut step = || (rng.random_range(-3.0f32..3.0), rng.random_range(-3.0f32..3.0));
        let (u, v) = (step(), step());
        let img = impulse(h, w, 12, 12);
        let fu = DisplacementField::constant(h, w, u.0, u.1);
        let fv = DisplacementField::constant(h, w, v.0, v.1);
        let omega = compose_fields(&fv, &fu).unwrap();
        let (cy, cx) = centroid(&warp_image(&img, &omega).unwrap());
        let (sy, sx) = centroid(&warp_image(&warp_image(&img, &fu).unwrap(), &fv).unwrap());
        assert!((cy - sy).abs() < 0.05 && (cx - sx).abs() < 0.05);
        // a warp by d moves content by −d
        let ey = 12.0 - (u.1 + v.1) as f64;
        let ex = 12.0 - (u.0 + v.0) as f64;
        assert!((cy - ey).abs() < 1e-4 && (cx - ex).abs() < 1e-4);
    }
}

#[test]
fn ncc_self_and_affine_intensity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let img = noise(&mut rng, 16, 16);
    let ncc = image_ncc(&img, &img).unwrap();
    assert!((ncc - 1.0).abs() < 1e-4, "{ncc}");
    let affine = Image::from_fn(16, 16, |y, x| 2.0 * img.get(y, x) + 0.3);
    let ncc = image_ncc(&img, &affine).unwrap();
    assert!((ncc - 1.0).abs() < 1e-4, "{ncc}");
}

#[test]
fn ncc_of_independent_noise_is_small() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = noise(&mut rng, 64, 64);
        let b = noise(&mut rng, 64, 64);
        let v = ncc_local(a.tensor(), b.tensor(), 9).unwrap();
        assert!(v < 0.2, "seed {seed}: {v}");
    }
}

#[test]
fn ncc_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let a = noise(&mut rng, 12, 10);
        let b = noise(&mut rng, 12, 10);
        let ab = ncc_local(a.tensor(), b.tensor(), 5).unwrap();
        let ba = ncc_local(b.tensor(), a.tensor(), 5).unwrap();
        assert!((ab - ba).abs() < 1e-6);
    }
}

#[test]
fn ncc_rejects_bad_windows() {
    let a = Tensor::<f64>::zeros(&[1, 8, 8]);
    for window in [1, 4, 9] {
        assert!(ncc_local(&a, &a, window).is_err(), "window {window}");
    }
}

#[test]
fn ncc_of_constant_windows_is_zero() {
    let a = Tensor::<f64>::full(&[1, 8, 8], 0.4);
    assert!(ncc_local(&a, &a, 3).unwrap() < 1e-12);
}

#[test]
fn tv_examples() {
    let c = DisplacementField::<f64>::constant(5, 6, 1.5, -2.0);
    assert_eq!(tv_penalty(c.tensor()).unwrap(), 0.0);

    // interior spike touches two differences per axis
    let (h, w, height) = (5usize, 6usize, 0.7f64);
    let mut spike = Tensor::<f64>::zeros(&[2, h, w]);
    spike.data_mut()[2 * w + 3] = height;
    let count = (2 * (h * (w - 1) + (h - 1) * w)) as f64;
    let expect = 4.0 * height * height / count;
    assert!((tv_penalty(&spike).unwrap() - expect).abs() < 1e-15);

    let ramp = DisplacementField::<f64>::from_fn(h, w, |_, x| (x as f64, 0.0));
    let expect = (h * (w - 1)) as f64 / count;
    assert!((tv_penalty(ramp.tensor()).unwrap() - expect).abs() < 1e-15);
}

#[test]
fn tv_scales_quadratically() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let f = Tensor::<f64>::from_fn(&[2, 6, 5], |_| rng.random_range(-1.0..1.0));
    let c = 4.0;
    let scaled = Tensor::from_fn(&[2, 6, 5], |i| c * f.data()[i]);
    assert_eq!(tv_penalty(&scaled).unwrap(), c * c * tv_penalty(&f).unwrap());
}

#[test]
fn rewarping_intermediates_differs_from_accumulated_warp() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let img = noise(&mut rng, 16, 16);
    let a1 = DisplacementField::from_fn(16, 16, |_, _| (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)));
    let a2 = DisplacementField::from_fn(16, 16, |_, _| (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)));
    let omega = compose_fields(&a2, &a1).unwrap();
    let accumulated = warp_image(&img, &omega).unwrap();
    let naive = warp_image(&warp_image(&img, &a1).unwrap(), &a2).unwrap();
    let diff = accumulated
        .data()
        .iter()
        .zip(naive.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(diff > 1e-3, "{diff}");
}
