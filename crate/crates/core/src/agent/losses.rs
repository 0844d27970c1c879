//! The four training objectives, built on a caller-owned graph so the same
//! code serves single-precision training and double-precision checks.

use crate::error::{contract, Result};
use crate::substrate::{Bound, Graph, Real, Tensor, Var};
use crate::warp::{compose_var, grid_sample_var, ncc_local_var, tv_penalty_var};

use super::nets::{actor_forward, critic_forward, planner_forward};
use super::policy::sample_plan_var;

/// One replayed transition in the precision of the loss graph.
#[derive(Clone, Debug)]
pub struct CriticSample<T: Real> {
    pub state: Tensor<T>,
    pub plan: Tensor<T>,
    pub reward: T,
    pub next_state: Tensor<T>,
    pub done: bool,
}

/// On-policy registration context: the step about to be taken from `Ω_{t−1}`.
#[derive(Clone, Debug)]
pub struct RegSample<T: Real> {
    /// 2×H×W network input for the current step.
    pub state: Tensor<T>,
    pub fixed: Tensor<T>,
    /// The original moving image (1×H×W).
    pub moving: Tensor<T>,
    pub omega_prev: Tensor<T>,
}

/// Soft Bellman target `r + γ(1−done)[Q̄(s′, p′) − α log κ(p′|s′)]`, with `p′`
/// sampled from the planner using `noise`. Evaluated on `g` but returned as
/// a plain value.
#[allow(clippy::too_many_arguments)]
pub fn soft_target<T: Real>(
    g: &mut Graph<'_, T>,
    planner: &Bound,
    target: &Bound,
    sample: &CriticSample<T>,
    noise: &[T],
    alpha: T,
    gamma: T,
) -> Result<T> {
    if sample.done || gamma == T::zero() {
        return Ok(sample.reward);
    }
    let s = g.constant_copy(&sample.next_state);
    let out = planner_forward(g, planner, s)?;
    let (_, plan, log_prob) = sample_plan_var(g, out.mu, out.log_sigma, noise)?;
    let q = critic_forward(g, target, s, plan)?;
    let v = g.scalar(q) - alpha * g.scalar(log_prob);
    Ok(sample.reward + gamma * v)
}

/// `J_Q = mean ½(Q(s, p) − y)²` with the target `y` held constant.
///
/// `planner` and `target` should be bound frozen; only `critic` receives
/// gradients. Returns the loss and the per-sample targets.
#[allow(clippy::too_many_arguments)]
pub fn q_loss_var<T: Real>(
    g: &mut Graph<'_, T>,
    critic: &Bound,
    target: &Bound,
    planner: &Bound,
    batch: &[CriticSample<T>],
    next_noise: &[Vec<T>],
    alpha: T,
    gamma: T,
) -> Result<(Var, Vec<T>)> {
    contract!(!batch.is_empty(), "q_loss needs a non-empty batch");
    contract!(next_noise.len() == batch.len(), "one noise vector per transition");
    let mut terms = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (sample, noise) in batch.iter().zip(next_noise) {
        let y = soft_target(g, planner, target, sample, noise, alpha, gamma)?;
        targets.push(y);
        let s = g.constant_copy(&sample.state);
        let p = g.constant_copy(&sample.plan);
        let q = critic_forward(g, critic, s, p)?;
        let diff = g.add_scalar(q, -y);
        let sq = g.square(diff);
        terms.push(sq);
    }
    let all = g.concat(&terms)?;
    let mean = g.mean(all);
    Ok((g.scale(mean, T::lit(0.5)), targets))
}

/// `J_κ = mean[α·log κ(p|s) − Q(s, p)]` over reparameterized plans.
///
/// `critic` should be bound frozen. Returns the loss and each sample's
/// log-probability.
pub fn planner_loss_var<T: Real>(
    g: &mut Graph<'_, T>,
    planner: &Bound,
    critic: &Bound,
    states: &[Tensor<T>],
    noise: &[Vec<T>],
    alpha: T,
) -> Result<(Var, Vec<T>)> {
    contract!(!states.is_empty(), "planner_loss needs a non-empty batch");
    contract!(noise.len() == states.len(), "one noise vector per state");
    let mut terms = Vec::with_capacity(states.len());
    let mut log_probs = Vec::with_capacity(states.len());
    for (state, eps) in states.iter().zip(noise) {
        let s = g.constant_copy(state);
        let out = planner_forward(g, planner, s)?;
        let (_, plan, lp) = sample_plan_var(g, out.mu, out.log_sigma, eps)?;
        log_probs.push(g.scalar(lp));
        let q = critic_forward(g, critic, s, plan)?;
        let a_lp = g.scale(lp, alpha);
        terms.push(g.sub(a_lp, q)?);
    }
    let all = g.concat(&terms)?;
    Ok((g.mean(all), log_probs))
}

/// `mean[−log α · (log κ + target_entropy)]`, differentiable in `log_alpha` only.
pub fn temperature_loss_var<T: Real>(g: &mut Graph<'_, T>, log_alpha: Var, log_probs: &[T], target_entropy: T) -> Result<Var> {
    contract!(!log_probs.is_empty(), "temperature loss needs log-probabilities");
    let n = T::lit(log_probs.len() as f64);
    let mean: T = log_probs.iter().map(|lp| *lp + target_entropy).sum::<T>() / n;
    Ok(g.scale(log_alpha, -mean))
}

/// Graph nodes produced by [`reg_loss_var`].
#[derive(Clone, Copy, Debug)]
pub struct RegTerms {
    pub loss: Var,
    pub ncc: Var,
    pub tv: Var,
    pub action: Var,
    pub omega: Var,
}

/// `J_reg = −NCC(I_F, I_M ∘ Ω_t) + λ·TV(Ω_t)` for a freshly sampled plan,
/// where `Ω_t` composes the decoded action with `Ω_{t−1}`.
#[allow(clippy::too_many_arguments)]
pub fn reg_loss_var<T: Real>(
    g: &mut Graph<'_, T>,
    planner: &Bound,
    actor: &Bound,
    ctx: &RegSample<T>,
    noise: &[T],
    max_disp: T,
    lambda: T,
    window: usize,
) -> Result<RegTerms> {
    let s = g.constant_copy(&ctx.state);
    let out = planner_forward(g, planner, s)?;
    let (_, plan, _) = sample_plan_var(g, out.mu, out.log_sigma, noise)?;
    let action = actor_forward(g, actor, plan, &out.skips, max_disp)?;
    let prev = g.constant_copy(&ctx.omega_prev);
    let omega = compose_var(g, action, prev)?;
    let moving = g.constant_copy(&ctx.moving);
    let warped = grid_sample_var(g, moving, omega)?;
    let fixed = g.constant_copy(&ctx.fixed);
    let ncc = ncc_local_var(g, fixed, warped, window)?;
    let tv = tv_penalty_var(g, omega)?;
    let neg = g.neg(ncc);
    let smooth = g.scale(tv, lambda);
    let loss = g.add(neg, smooth)?;
    Ok(RegTerms {
        loss,
        ncc,
        tv,
        action,
        omega,
    })
}
