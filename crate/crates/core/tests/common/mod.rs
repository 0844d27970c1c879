//! Randomized finite-difference cases shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spac_core::substrate::{gradient_check, GradCheckOptions, GradCheckReport, Graph, Real, ScalarFn, Tensor, Var};
use spac_core::warp::{compose_var, grid_sample_var, ncc_local_var, tv_penalty_var};
use spac_core::Result;

pub mod nets;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Conv2d,
    Upsample,
    Linear,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    Relu,
    LeakyRelu,
    Tanh,
    Softplus,
    Exp,
    Log,
    Square,
    Clamp,
    Mean,
    Sum,
    Concat,
    Reshape,
    Slice,
    GridSample,
    Compose,
    Ncc,
    Tv,
}

pub const SUBSTRATE_OPS: [OpKind; 22] = [
    OpKind::Conv2d,
    OpKind::Upsample,
    OpKind::Linear,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Div,
    OpKind::Scale,
    OpKind::AddScalar,
    OpKind::Relu,
    OpKind::LeakyRelu,
    OpKind::Tanh,
    OpKind::Softplus,
    OpKind::Exp,
    OpKind::Log,
    OpKind::Square,
    OpKind::Clamp,
    OpKind::Mean,
    OpKind::Sum,
    OpKind::Concat,
    OpKind::Reshape,
    OpKind::Slice,
];

pub const WARP_OPS: [OpKind; 4] = [OpKind::GridSample, OpKind::Compose, OpKind::Ncc, OpKind::Tv];

/// One random instance: the op, its hyper-parameters, and a fixed random
/// projection that turns the op's output into a scalar.
pub struct OpCase {
    pub kind: OpKind,
    stride: usize,
    padding: usize,
    factor: usize,
    scalar: f64,
    window: usize,
    shape: Vec<usize>,
    start: usize,
    len: usize,
    projection: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from a kink at `at` by `gap`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], at: &[f64], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(-2.0..2.0);
        if at.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

/// A displacement field whose sample points stay clear of integer
/// coordinates, where bilinear interpolation is not differentiable.
pub fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, reach: f64) -> Tensor<f64> {
    let plane = h * w;
    Tensor::from_fn(&[2, h, w], |i| {
        let p = i % plane;
        let base = if i < plane { (p % w) as f64 } else { (p / w) as f64 };
        loop {
            let d = rng.random_range(-reach..reach);
            let s = base + d;
            if (s - s.round()).abs() > 0.05 {
                break d;
            }
        }
    })
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=3), rng.random_range(2..=6), rng.random_range(2..=6))
}

impl OpCase {
    /// Draws the `index`-th random instance of `kind`.
    pub fn random(kind: OpKind, seed: u64) -> (Self, Vec<Tensor<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut case = OpCase {
            kind,
            stride: 1,
            padding: 0,
            factor: 1,
            scalar: rng.random_range(-2.0..2.0),
            window: 3,
            shape: Vec::new(),
            start: 0,
            len: 0,
            projection: Vec::new(),
        };
        let (c, h, w) = dims(&mut rng);
        let inputs: Vec<Tensor<f64>> = match kind {
            OpKind::Conv2d => {
                let k = [1, 3, 5][rng.random_range(0..3)];
                let (h, w) = (h + k, w + k);
                let c_out = rng.random_range(1..=3);
                case.stride = rng.random_range(1..=2);
                case.padding = rng.random_range(0..=k / 2);
                vec![
                    uniform(&mut rng, &[c, h, w], -1.0, 1.0),
                    uniform(&mut rng, &[c_out, c, k, k], -1.0, 1.0),
                    uniform(&mut rng, &[c_out], -1.0, 1.0),
                ]
            }
            OpKind::Upsample => {
                case.factor = rng.random_range(1..=3);
                vec![uniform(&mut rng, &[c, h, w], -1.0, 1.0)]
            }
            OpKind::Linear => {
                let n = rng.random_range(1..=8);
                let m = rng.random_range(1..=8);
                vec![
                    uniform(&mut rng, &[n], -1.0, 1.0),
                    uniform(&mut rng, &[m, n], -1.0, 1.0),
                    uniform(&mut rng, &[m], -1.0, 1.0),
                ]
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => vec![
                uniform(&mut rng, &[c, h, w], -1.0, 1.0),
                uniform(&mut rng, &[c, h, w], -1.0, 1.0),
            ],
            OpKind::Div => {
                let num = uniform(&mut rng, &[c, h, w], -1.0, 1.0);
                let den = Tensor::from_fn(&[c, h, w], |_| {
                    let v: f64 = rng.random_range(0.5..2.0);
                    if rng.random_bool(0.5) { v } else { -v }
                });
                vec![num, den]
            }
            OpKind::Relu | OpKind::LeakyRelu => vec![away_from(&mut rng, &[c, h, w], &[0.0], 0.05)],
            OpKind::Clamp => vec![away_from(&mut rng, &[c, h, w], &[-0.5, 0.5], 0.05)],
            OpKind::Log => vec![uniform(&mut rng, &[c, h, w], 0.2, 3.0)],
            OpKind::Concat => {
                let c2 = rng.random_range(1..=3);
                vec![
                    uniform(&mut rng, &[c, h, w], -1.0, 1.0),
                    uniform(&mut rng, &[c2, h, w], -1.0, 1.0),
                ]
            }
            OpKind::Reshape => {
                case.shape = vec![h, c * w];
                vec![uniform(&mut rng, &[c, h, w], -1.0, 1.0)]
            }
            OpKind::Slice => {
                let n = c * h * w;
                case.start = rng.random_range(0..n);
                case.len = rng.random_range(1..=n - case.start);
                vec![uniform(&mut rng, &[n], -1.0, 1.0)]
            }
            OpKind::GridSample => {
                let (h, w) = (h + 1, w + 1);
                vec![
                    uniform(&mut rng, &[c, h, w], 0.0, 1.0),
                    smooth_field(&mut rng, h, w, 2.5),
                ]
            }
            OpKind::Compose => {
                let (h, w) = (h + 1, w + 1);
                vec![
                    uniform(&mut rng, &[2, h, w], -1.0, 1.0),
                    smooth_field(&mut rng, h, w, 2.5),
                ]
            }
            OpKind::Ncc => {
                let (h, w) = (rng.random_range(5..=9), rng.random_range(5..=9));
                case.window = [3, 5][rng.random_range(0..2)];
                vec![uniform(&mut rng, &[1, h, w], 0.0, 1.0), uniform(&mut rng, &[1, h, w], 0.0, 1.0)]
            }
            OpKind::Tv => vec![uniform(&mut rng, &[2, h, w], -2.0, 2.0)],
            _ => vec![uniform(&mut rng, &[c, h, w], -1.5, 1.5)],
        };
        let out_len = {
            let mut g = Graph::<f64>::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.input(t)).collect();
            let out = case.apply(&mut g, &vars).expect("random case is well formed");
            g.value(out).len()
        };
        case.projection = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        (case, inputs)
    }

    fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: &[Var]) -> Result<Var> {
        let s = T::lit(self.scalar);
        Ok(match self.kind {
            OpKind::Conv2d => g.conv2d(x[0], x[1], x[2], self.stride, self.padding)?,
            OpKind::Upsample => g.upsample_nearest(x[0], self.factor)?,
            OpKind::Linear => g.linear(x[0], x[1], x[2])?,
            OpKind::Add => g.add(x[0], x[1])?,
            OpKind::Sub => g.sub(x[0], x[1])?,
            OpKind::Mul => g.mul(x[0], x[1])?,
            OpKind::Div => g.div(x[0], x[1])?,
            OpKind::Scale => g.scale(x[0], s),
            OpKind::AddScalar => g.add_scalar(x[0], s),
            OpKind::Relu => g.relu(x[0]),
            OpKind::LeakyRelu => g.leaky_relu(x[0], T::lit(0.2)),
            OpKind::Tanh => g.tanh(x[0]),
            OpKind::Softplus => g.softplus(x[0]),
            OpKind::Exp => g.exp(x[0]),
            OpKind::Log => g.log(x[0])?,
            OpKind::Square => g.square(x[0]),
            OpKind::Clamp => g.clamp(x[0], T::lit(-0.5), T::lit(0.5)),
            OpKind::Mean => g.mean(x[0]),
            OpKind::Sum => g.sum(x[0]),
            OpKind::Concat => g.concat_channels(&[x[0], x[1]])?,
            OpKind::Reshape => g.reshape(x[0], &self.shape)?,
            OpKind::Slice => g.slice(x[0], self.start, self.len)?,
            OpKind::GridSample => grid_sample_var(g, x[0], x[1])?,
            OpKind::Compose => compose_var(g, x[0], x[1])?,
            OpKind::Ncc => ncc_local_var(g, x[0], x[1], self.window)?,
            OpKind::Tv => tv_penalty_var(g, x[0])?,
        })
    }
}

impl ScalarFn for OpCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, x: &[Var]) -> Result<Var> {
        let out = self.apply(g, x)?;
        let shape = g.shape(out).to_vec();
        let w = g.constant(&shape, self.projection.iter().map(|v| T::lit(*v)).collect())?;
        let p = g.mul(out, w)?;
        Ok(g.sum(p))
    }
}

/// Worst report over `instances` random draws of `kind`.
pub fn sweep(kind: OpKind, instances: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut worst: Option<GradCheckReport> = None;
    for i in 0..instances {
        let (case, inputs) = OpCase::random(kind, 1_000 * (kind as u64) + i);
        let r = gradient_check(&case, &inputs, opts).expect("gradient check runs");
        if worst.as_ref().is_none_or(|w| r.max_rel_error > w.max_rel_error) {
            worst = Some(r);
        }
    }
    worst.expect("at least one instance")
}
