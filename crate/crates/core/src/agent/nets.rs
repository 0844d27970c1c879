//! Planner, actor and critic networks.
//!
//! The planner encodes the 2-channel state at three scales (full, half,
//! quarter resolution) and maps the bottleneck to the plan distribution. The
//! actor decodes a plan back to a displacement field, concatenating the
//! planner's feature map at each scale. The critic encodes the state on its
//! own and scores it together with a plan.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::substrate::{Bound, Graph, ParameterSet, Real, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LOG_SIGMA_MIN: f64 = -20.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;
/// Encoder channels at full, half and quarter resolution.
pub const ENC_CHANNELS: [usize; 3] = [16, 32, 32];
const DEC_CHANNELS: [usize; 3] = [16, 16, 32];
const CRITIC_CHANNELS: [usize; 2] = [8, 16];
const CRITIC_HIDDEN: usize = 64;
/// The actor's output layer starts this much smaller than the others, so
/// an untrained policy takes near-identity steps.
const ACTOR_OUT_SCALE: f32 = 0.01;

/// Input geometry shared by all three networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub height: usize,
    pub width: usize,
    pub plan_dim: usize,
}

impl NetShape {
    pub fn new(height: usize, width: usize, plan_dim: usize) -> Result<Self> {
        contract!(
            height >= 4 && width >= 4 && height.is_multiple_of(4) && width.is_multiple_of(4),
            "image sides must be positive multiples of 4, got {height}×{width}"
        );
        contract!(plan_dim >= 1, "plan_dim must be positive");
        Ok(Self {
            height,
            width,
            plan_dim,
        })
    }

    fn quarter(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, scale: f32) -> Tensor<f32> {
    let bound = scale / (fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound)).with_grad()
}

fn add_conv(p: &mut ParameterSet<f32>, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize, scale: f32) {
    let fan_in = c_in * 9;
    p.insert(format!("{name}.w"), uniform(rng, &[c_out, c_in, 3, 3], fan_in, scale))
        .expect("unique layer name");
    p.insert(format!("{name}.b"), Tensor::zeros(&[c_out]).with_grad())
        .expect("unique layer name");
}

fn add_linear(p: &mut ParameterSet<f32>, rng: &mut ChaCha8Rng, name: &str, n_in: usize, n_out: usize) {
    p.insert(format!("{name}.w"), uniform(rng, &[n_out, n_in], n_in, 1.0))
        .expect("unique layer name");
    p.insert(format!("{name}.b"), Tensor::zeros(&[n_out]).with_grad())
        .expect("unique layer name");
}

pub fn init_planner(shape: &NetShape, rng: &mut ChaCha8Rng) -> ParameterSet<f32> {
    let mut p = ParameterSet::new();
    let [c0, c1, c2] = ENC_CHANNELS;
    add_conv(&mut p, rng, "enc0", 2, c0, 1.0);
    add_conv(&mut p, rng, "enc1", c0, c1, 1.0);
    add_conv(&mut p, rng, "enc2", c1, c2, 1.0);
    let (qh, qw) = shape.quarter();
    add_linear(&mut p, rng, "head", c2 * qh * qw, 2 * shape.plan_dim);
    p
}

pub fn init_actor(shape: &NetShape, rng: &mut ChaCha8Rng) -> ParameterSet<f32> {
    let mut p = ParameterSet::new();
    let [e0, e1, e2] = ENC_CHANNELS;
    let [d0, d1, d2] = DEC_CHANNELS;
    let (qh, qw) = shape.quarter();
    add_linear(&mut p, rng, "proj", shape.plan_dim, e2 * qh * qw);
    add_conv(&mut p, rng, "dec2", e2 + e2, d2, 1.0);
    add_conv(&mut p, rng, "dec1", d2 + e1, d1, 1.0);
    add_conv(&mut p, rng, "dec0", d1 + e0, d0, 1.0);
    add_conv(&mut p, rng, "out", d0, 2, ACTOR_OUT_SCALE);
    p
}

pub fn init_critic(shape: &NetShape, rng: &mut ChaCha8Rng) -> ParameterSet<f32> {
    let mut p = ParameterSet::new();
    let [c0, c1] = CRITIC_CHANNELS;
    add_conv(&mut p, rng, "c0", 2, c0, 1.0);
    add_conv(&mut p, rng, "c1", c0, c1, 1.0);
    let (qh, qw) = shape.quarter();
    add_linear(&mut p, rng, "fc", c1 * qh * qw, CRITIC_HIDDEN);
    add_linear(&mut p, rng, "h1", CRITIC_HIDDEN + shape.plan_dim, CRITIC_HIDDEN);
    add_linear(&mut p, rng, "q", CRITIC_HIDDEN, 1);
    p
}

fn conv_block<T: Real>(g: &mut Graph<'_, T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = g.conv2d(x, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?, stride, 1)?;
    Ok(g.leaky_relu(y, T::lit(LEAKY_SLOPE)))
}

fn linear<T: Real>(g: &mut Graph<'_, T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    g.linear(x, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?)
}

/// Planner outputs as graph nodes.
#[derive(Clone, Debug)]
pub struct PlannerVars {
    pub mu: Var,
    /// Clamped to `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub log_sigma: Var,
    /// Encoder features at full, half and quarter resolution.
    pub skips: [Var; 3],
}

pub fn planner_forward<T: Real>(g: &mut Graph<'_, T>, p: &Bound, state: Var) -> Result<PlannerVars> {
    let s = g.shape(state).to_vec();
    contract!(
        s.len() == 3 && s[0] == 2 && s[1].is_multiple_of(4) && s[2].is_multiple_of(4),
        "planner expects a 2×H×W state with H, W divisible by 4, got {s:?}"
    );
    let f0 = conv_block(g, p, "enc0", state, 1)?;
    let f1 = conv_block(g, p, "enc1", f0, 2)?;
    let f2 = conv_block(g, p, "enc2", f1, 2)?;
    let n = g.value(f2).len();
    let flat = g.reshape(f2, &[n])?;
    let head = linear(g, p, "head", flat)?;
    let plan_dim = g.value(head).len() / 2;
    let mu = g.slice(head, 0, plan_dim)?;
    let raw = g.slice(head, plan_dim, plan_dim)?;
    let log_sigma = g.clamp(raw, T::lit(LOG_SIGMA_MIN), T::lit(LOG_SIGMA_MAX));
    Ok(PlannerVars {
        mu,
        log_sigma,
        skips: [f0, f1, f2],
    })
}

/// Decodes a plan into a per-step displacement field bounded by `max_disp`.
pub fn actor_forward<T: Real>(g: &mut Graph<'_, T>, p: &Bound, plan: Var, skips: &[Var; 3], max_disp: T) -> Result<Var> {
    let bottleneck = g.shape(skips[2]).to_vec();
    let x = linear(g, p, "proj", plan)?;
    let x = g.leaky_relu(x, T::lit(LEAKY_SLOPE));
    let x = g.reshape(x, &bottleneck)?;
    let x = g.concat_channels(&[x, skips[2]])?;
    let x = conv_block(g, p, "dec2", x, 1)?;
    let x = g.upsample_nearest(x, 2)?;
    let x = g.concat_channels(&[x, skips[1]])?;
    let x = conv_block(g, p, "dec1", x, 1)?;
    let x = g.upsample_nearest(x, 2)?;
    let x = g.concat_channels(&[x, skips[0]])?;
    let x = conv_block(g, p, "dec0", x, 1)?;
    let x = g.conv2d(x, p.get("out.w")?, p.get("out.b")?, 1, 1)?;
    let x = g.tanh(x);
    Ok(g.scale(x, max_disp))
}

/// Soft Q-value of a (state, plan) pair as a one-element node.
pub fn critic_forward<T: Real>(g: &mut Graph<'_, T>, p: &Bound, state: Var, plan: Var) -> Result<Var> {
    let x = conv_block(g, p, "c0", state, 2)?;
    let x = conv_block(g, p, "c1", x, 2)?;
    let n = g.value(x).len();
    let x = g.reshape(x, &[n])?;
    let x = linear(g, p, "fc", x)?;
    let x = g.leaky_relu(x, T::lit(LEAKY_SLOPE));
    let x = g.concat(&[x, plan])?;
    let x = linear(g, p, "h1", x)?;
    let x = g.leaky_relu(x, T::lit(LEAKY_SLOPE));
    linear(g, p, "q", x)
}
