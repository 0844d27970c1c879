//! The agent: parameters, optimizers, replay, and the rollout / update /
//! evaluation steps of the training loop.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{dice, env_reset, env_step, warp_labels, EpisodeState, SegmentationMap, State, StepOutcome, Transition};
use crate::error::{contract, Error, Result};
use crate::image::Image;
use crate::substrate::{adam_step, polyak_update, AdamState, Graph, ParameterSet, Tensor};
use crate::warp::{image_ncc, ncc_window_for, warp_image, DisplacementField};

use super::losses::{planner_loss_var, q_loss_var, reg_loss_var, temperature_loss_var, CriticSample, RegSample};
use super::nets::{actor_forward, init_actor, init_critic, init_planner, planner_forward, NetShape};
use super::policy::{sample_plan_var, Plan};
use super::replay::ReplayPool;
use super::{Mode, TrainConfig};

/// RNG stream ids derived from the run seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_NOISE: u64 = 1;
pub const STREAM_POOL: u64 = 2;
pub const STREAM_DATA: u64 = 3;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Separate Adam states for each update rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub critic: AdamState,
    pub planner_rl: AdamState,
    pub reg_planner: AdamState,
    pub reg_actor: AdamState,
    pub alpha: AdamState,
}

impl Optimizers {
    pub const NAMES: [&'static str; 5] = ["critic", "planner_rl", "reg_planner", "reg_actor", "alpha"];

    pub fn all(&self) -> [&AdamState; 5] {
        [&self.critic, &self.planner_rl, &self.reg_planner, &self.reg_actor, &self.alpha]
    }
}

/// The step a registration update trains on: the last rollout's starting
/// point within its episode.
#[derive(Clone, Debug, PartialEq)]
pub struct RegContext {
    pub state: State,
    pub omega_prev: DisplacementField,
}

/// Scalar diagnostics of one gradient step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub q_loss: f64,
    pub planner_loss: f64,
    pub reg_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// NCC term of the registration loss.
    pub reg_ncc: f64,
}

/// Step-wise evaluation of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Dice at t = 0..=T.
    pub dice: Vec<f64>,
    /// NCC between fixed and warped moving at t = 0..=T.
    pub ncc: Vec<f64>,
    /// Accumulated fields Ω_1..Ω_T.
    pub fields: Vec<DisplacementField>,
}

impl EvalResult {
    pub fn final_field(&self) -> Option<&DisplacementField> {
        self.fields.last()
    }
}

pub struct Agent {
    pub(crate) config: TrainConfig,
    pub(crate) shape: NetShape,
    pub(crate) planner: ParameterSet<f32>,
    pub(crate) actor: ParameterSet<f32>,
    pub(crate) critic: ParameterSet<f32>,
    pub(crate) target: ParameterSet<f32>,
    pub(crate) log_alpha: ParameterSet<f32>,
    pub(crate) opt: Optimizers,
    pub(crate) pool: ReplayPool,
    pub(crate) noise_rng: ChaCha8Rng,
    pub(crate) reg_context: Option<RegContext>,
    pub(crate) updates: u64,
    /// Pool positions of the most recent critic batch.
    pub(crate) last_batch: Vec<usize>,
}

fn frozen_copy(p: &ParameterSet<f32>) -> ParameterSet<f32> {
    let mut out = p.clone();
    for (_, t) in out.iter_mut() {
        t.set_requires_grad(false);
    }
    out
}

fn check_loss(name: &str, v: f32) -> Result<f64> {
    if v.is_finite() {
        Ok(v as f64)
    } else {
        Err(Error::NonFinite(format!("{name} evaluated to {v}")))
    }
}

impl Agent {
    pub fn new(config: TrainConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        let shape = NetShape::new(height, width, config.plan_dim)?;
        let mut init = seeded_stream(config.seed, STREAM_INIT);
        let planner = init_planner(&shape, &mut init);
        let actor = init_actor(&shape, &mut init);
        let critic = init_critic(&shape, &mut init);
        let target = frozen_copy(&critic);
        let mut log_alpha = ParameterSet::new();
        log_alpha.insert("log_alpha", Tensor::scalar(config.init_alpha.ln() as f32).with_grad())?;
        let opt = Optimizers {
            critic: AdamState::new(&critic, config.lr_critic as f32),
            planner_rl: AdamState::new(&planner, config.lr_planner as f32),
            reg_planner: AdamState::new(&planner, config.lr_reg as f32),
            reg_actor: AdamState::new(&actor, config.lr_reg as f32),
            alpha: AdamState::new(&log_alpha, config.lr_alpha as f32),
        };
        let pool = ReplayPool::new(config.pool_capacity, seeded_stream(config.seed, STREAM_POOL))?;
        Ok(Self {
            noise_rng: seeded_stream(config.seed, STREAM_NOISE),
            config,
            shape,
            planner,
            actor,
            critic,
            target,
            log_alpha,
            opt,
            pool,
            reg_context: None,
            updates: 0,
            last_batch: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn planner(&self) -> &ParameterSet<f32> {
        &self.planner
    }

    pub fn actor(&self) -> &ParameterSet<f32> {
        &self.actor
    }

    pub fn critic(&self) -> &ParameterSet<f32> {
        &self.critic
    }

    pub fn target_critic(&self) -> &ParameterSet<f32> {
        &self.target
    }

    pub fn optimizers(&self) -> &Optimizers {
        &self.opt
    }

    pub fn pool(&self) -> &ReplayPool {
        &self.pool
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Pool positions of the most recent critic batch.
    pub fn last_batch(&self) -> &[usize] {
        &self.last_batch
    }

    pub fn alpha(&self) -> f64 {
        (self.log_alpha.get("log_alpha").expect("present").data()[0] as f64).exp()
    }

    /// Mutable access for tests and tools that edit weights directly.
    pub fn actor_mut(&mut self) -> &mut ParameterSet<f32> {
        &mut self.actor
    }

    pub fn planner_mut(&mut self) -> &mut ParameterSet<f32> {
        &mut self.planner
    }

    pub fn critic_mut(&mut self) -> &mut ParameterSet<f32> {
        &mut self.critic
    }

    /// Zeroes the actor's output layer, making every action the identity.
    pub fn zero_actor_head(&mut self) {
        for name in ["out.w", "out.b"] {
            let t = self.actor.get_mut(name).expect("actor output layer");
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn max_disp(&self) -> f32 {
        self.config.max_step_disp as f32
    }

    fn draw_noise(&mut self) -> Vec<f32> {
        (0..self.config.plan_dim)
            .map(|_| self.noise_rng.sample::<f32, _>(StandardNormal))
            .collect()
    }

    /// Plan and action for `state`: sampled with `noise`, or the
    /// distribution's mode `tanh(mu)` when `noise` is `None`.
    pub fn act(&self, state: &State, noise: Option<&[f32]>) -> Result<(Plan, DisplacementField)> {
        let st = state.to_tensor();
        let mut g = Graph::<f32>::new();
        let pb = g.bind_frozen(&self.planner);
        let ab = g.bind_frozen(&self.actor);
        let s = g.constant_tensor(&st);
        let out = planner_forward(&mut g, &pb, s)?;
        let (pre, plan) = match noise {
            Some(eps) => {
                let (pre, plan, _) = sample_plan_var(&mut g, out.mu, out.log_sigma, eps)?;
                (pre, plan)
            }
            None => {
                let t = g.tanh(out.mu);
                (out.mu, g.clamp(t, -(1.0 - f32::EPSILON / 2.0), 1.0 - f32::EPSILON / 2.0))
            }
        };
        let action = actor_forward(&mut g, &ab, plan, &out.skips, self.max_disp())?;
        let plan = Plan {
            values: g.value(plan).to_vec(),
            pre: g.value(pre).to_vec(),
        };
        let field = DisplacementField::from_tensor(g.to_tensor(action))?;
        Ok((plan, field))
    }

    /// Re-decodes a stored plan against the skip features of `state`.
    pub fn decode(&self, state: &State, plan: &Plan) -> Result<DisplacementField> {
        let st = state.to_tensor();
        let pt = Tensor::new(&[plan.len()], plan.values.clone())?;
        let mut g = Graph::<f32>::new();
        let pb = g.bind_frozen(&self.planner);
        let ab = g.bind_frozen(&self.actor);
        let s = g.constant_tensor(&st);
        let out = planner_forward(&mut g, &pb, s)?;
        let p = g.constant_tensor(&pt);
        let action = actor_forward(&mut g, &ab, p, &out.skips, self.max_disp())?;
        DisplacementField::from_tensor(g.to_tensor(action))
    }

    /// One environment step under the stochastic policy; the transition is
    /// appended to the replay pool and also returned.
    pub fn rollout_step(&mut self, ep: &mut EpisodeState, state: &State) -> Result<(Transition, StepOutcome)> {
        contract!(!ep.is_done(), "episode already finished at t = {}", ep.t());
        let noise = self.draw_noise();
        let (plan, action) = self.act(state, Some(&noise))?;
        let context = RegContext {
            state: state.clone(),
            omega_prev: ep.omega().clone(),
        };
        let outcome = env_step(ep, &action)?;
        let transition = Transition {
            state: state.clone(),
            plan,
            action,
            reward: outcome.reward as f32,
            next_state: outcome.state.clone(),
            done: outcome.done,
        };
        self.pool.push(transition.clone());
        self.reg_context = Some(context);
        Ok((transition, outcome))
    }

    /// Registration sample for the last rollout step.
    fn reg_sample(&self, ep_moving: &Image) -> Option<RegSample<f32>> {
        self.reg_context.as_ref().map(|c| RegSample {
            state: c.state.to_tensor(),
            fixed: c.state.fixed.tensor().clone(),
            moving: ep_moving.tensor().clone(),
            omega_prev: c.omega_prev.tensor().clone(),
        })
    }

    /// One gradient step: critic, planner (RL), planner + actor
    /// (registration), temperature, then the target critic. Returns `None`
    /// when the pool holds fewer than one batch.
    ///
    /// `moving` is the original moving image of the episode the last rollout
    /// came from.
    pub fn gradient_update_step(&mut self, moving: &Image) -> Result<Option<LossReport>> {
        let b = self.config.batch_size;
        if self.pool.len() < b {
            return Ok(None);
        }
        let mut report = LossReport::default();
        if self.config.mode == Mode::Spac {
            self.last_batch = self.pool.sample_indices(b)?;
            let pool = &self.pool;
            let batch: Vec<CriticSample<f32>> = self
                .last_batch
                .iter()
                .map(|&i| pool.get(i).expect("sampled index in range"))
                .map(|t| CriticSample {
                    state: t.state.to_tensor(),
                    plan: Tensor::new(&[t.plan.len()], t.plan.values.clone()).expect("plan vector"),
                    reward: t.reward,
                    next_state: t.next_state.to_tensor(),
                    done: t.done,
                })
                .collect();
            let alpha = self.alpha() as f32;
            let gamma = self.config.gamma as f32;

            let next_noise: Vec<Vec<f32>> = (0..b).map(|_| self.draw_noise()).collect();
            {
                let mut g = Graph::new();
                let cb = g.bind(&self.critic);
                let tb = g.bind_frozen(&self.target);
                let pb = g.bind_frozen(&self.planner);
                let (loss, _) = q_loss_var(&mut g, &cb, &tb, &pb, &batch, &next_noise, alpha, gamma)?;
                report.q_loss = check_loss("critic loss", g.scalar(loss))?;
                let grads = g.backward(loss)?;
                drop(g);
                self.critic.accumulate(&cb, &grads)?;
            }
            adam_step(&mut self.critic, &mut self.opt.critic)?;

            let states: Vec<Tensor<f32>> = batch.into_iter().map(|s| s.state).collect();
            let noise: Vec<Vec<f32>> = (0..b).map(|_| self.draw_noise()).collect();
            let log_probs = {
                let mut g = Graph::new();
                let pb = g.bind(&self.planner);
                let cb = g.bind_frozen(&self.critic);
                let (loss, lps) = planner_loss_var(&mut g, &pb, &cb, &states, &noise, alpha)?;
                report.planner_loss = check_loss("planner loss", g.scalar(loss))?;
                let grads = g.backward(loss)?;
                drop(g);
                self.planner.accumulate(&pb, &grads)?;
                lps
            };
            adam_step(&mut self.planner, &mut self.opt.planner_rl)?;
            self.reg_update(moving, &mut report)?;

            let target_entropy = -(self.config.plan_dim as f32);
            {
                let mut g = Graph::new();
                let lb = g.bind(&self.log_alpha);
                let la = lb.get("log_alpha")?;
                let loss = temperature_loss_var(&mut g, la, &log_probs, target_entropy)?;
                report.alpha_loss = check_loss("temperature loss", g.scalar(loss))?;
                let grads = g.backward(loss)?;
                drop(g);
                self.log_alpha.accumulate(&lb, &grads)?;
            }
            adam_step(&mut self.log_alpha, &mut self.opt.alpha)?;
            polyak_update(&mut self.target, &self.critic, self.config.tau)?;
        } else {
            self.reg_update(moving, &mut report)?;
        }
        report.alpha = self.alpha();
        self.updates += 1;
        Ok(Some(report))
    }

    fn reg_update(&mut self, moving: &Image, report: &mut LossReport) -> Result<()> {
        let Some(ctx) = self.reg_sample(moving) else { return Ok(()) };
        let noise = self.draw_noise();
        let window = ncc_window_for(self.shape.height, self.shape.width);
        {
            let mut g = Graph::new();
            let pb = g.bind(&self.planner);
            let ab = g.bind(&self.actor);
            let terms = reg_loss_var(
                &mut g,
                &pb,
                &ab,
                &ctx,
                &noise,
                self.max_disp(),
                self.config.lambda as f32,
                window,
            )?;
            report.reg_loss = check_loss("registration loss", g.scalar(terms.loss))?;
            report.reg_ncc = g.scalar(terms.ncc) as f64;
            let grads = g.backward(terms.loss)?;
            drop(g);
            self.planner.accumulate(&pb, &grads)?;
            self.actor.accumulate(&ab, &grads)?;
        }
        adam_step(&mut self.planner, &mut self.opt.reg_planner)?;
        adam_step(&mut self.actor, &mut self.opt.reg_actor)?;
        Ok(())
    }

    /// Runs the deterministic policy for `horizon` steps. Dice is measured
    /// on K-means maps, or on `labels = (fixed, moving)` when supplied.
    pub fn evaluate_policy(
        &self,
        fixed: Arc<Image>,
        moving: Arc<Image>,
        horizon: usize,
        labels: Option<(&SegmentationMap, &SegmentationMap)>,
    ) -> Result<EvalResult> {
        let (mut ep, mut state) = env_reset(Arc::clone(&fixed), Arc::clone(&moving), horizon, self.config.seed)?;
        let score = |ep: &EpisodeState, d: f64| -> Result<f64> {
            match labels {
                Some((lf, lm)) => dice(lf, &warp_labels(lm, ep.omega())?),
                None => Ok(d),
            }
        };
        let mut result = EvalResult {
            dice: vec![score(&ep, ep.dice())?],
            ncc: vec![image_ncc(&fixed, &moving)?],
            fields: Vec::with_capacity(horizon),
        };
        for _ in 0..horizon {
            let (_, action) = self.act(&state, None)?;
            let out = env_step(&mut ep, &action)?;
            result.dice.push(score(&ep, out.dice)?);
            result.ncc.push(image_ncc(&fixed, &out.state.moving)?);
            result.fields.push(ep.omega().clone());
            state = out.state;
        }
        Ok(result)
    }

    /// Warps `moving` by a field; convenience for tools.
    pub fn warp(moving: &Image, field: &DisplacementField) -> Result<Image> {
        warp_image(moving, field)
    }
}
