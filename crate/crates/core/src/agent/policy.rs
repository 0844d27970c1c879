//! The tanh-squashed Gaussian plan distribution.

use std::f64::consts::PI;

use crate::error::{contract, Result};
use crate::substrate::{Graph, Real, Var};

/// Floor inside the squash correction `log(1 − tanh² + ε)`.
pub const SQUASH_EPS: f64 = 1e-6;
/// Largest `f32` below 1.
const PLAN_BOUND: f64 = 1.0 - 1.0 / 16_777_216.0;

/// A sampled plan: squashed values in (−1, 1) and the Gaussian sample
/// they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub values: Vec<f32>,
    pub pre: Vec<f32>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Planner distribution parameters and encoder features, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerOutput {
    pub mu: Vec<f32>,
    pub log_sigma: Vec<f32>,
    pub skips: Vec<crate::substrate::Tensor<f32>>,
}

/// Reparameterized sample on a graph: returns `(pre, plan, log_prob)` with
/// `pre = mu + exp(log_sigma)·noise` and `plan = tanh(pre)`.
pub fn sample_plan_var<T: Real>(
    g: &mut Graph<'_, T>,
    mu: Var,
    log_sigma: Var,
    noise: &[T],
) -> Result<(Var, Var, Var)> {
    let d = g.value(mu).len();
    contract!(
        noise.len() == d && g.value(log_sigma).len() == d,
        "plan noise has {} entries for plan_dim {d}",
        noise.len()
    );
    let eps = g.constant(&[d], noise.to_vec())?;
    let sigma = g.exp(log_sigma);
    let spread = g.mul(sigma, eps)?;
    let pre = g.add(mu, spread)?;
    let squashed = g.tanh(pre);
    // keep saturated components strictly inside (−1, 1) at single precision
    let plan = g.clamp(squashed, -T::lit(PLAN_BOUND), T::lit(PLAN_BOUND));

    // Gaussian density of pre in terms of the noise
    let half_eps2: T = noise.iter().map(|e| T::lit(0.5) * *e * *e).sum();
    let const_part = -half_eps2 - T::lit(0.5 * (2.0 * PI).ln() * d as f64);
    let ls_sum = g.sum(log_sigma);
    let neg_ls = g.neg(ls_sum);
    let gauss = g.add_scalar(neg_ls, const_part);

    let p2 = g.square(plan);
    let one_minus = g.scale(p2, -T::one());
    let inner = g.add_scalar(one_minus, T::one() + T::lit(SQUASH_EPS));
    let logs = g.log(inner)?;
    let correction = g.sum(logs);
    let log_prob = g.sub(gauss, correction)?;
    Ok((pre, plan, log_prob))
}

/// Plain evaluation of [`sample_plan_var`].
pub fn sample_plan(out: &PlannerOutput, noise: &[f32]) -> Result<(Plan, f64)> {
    let d = out.mu.len();
    let mut g = Graph::<f32>::new();
    let mu = g.constant(&[d], out.mu.clone())?;
    let ls = g.constant(&[d], out.log_sigma.clone())?;
    let (pre, plan, lp) = sample_plan_var(&mut g, mu, ls, noise)?;
    Ok((
        Plan {
            values: g.value(plan).to_vec(),
            pre: g.value(pre).to_vec(),
        },
        g.scalar(lp) as f64,
    ))
}
