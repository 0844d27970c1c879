//! Planner, actor and critic networks, the squashed-Gaussian plan
//! distribution, the four training losses, replay, and the training driver.

pub mod losses;
pub mod nets;
pub mod policy;
pub mod replay;
mod trainer;

pub use losses::{
    planner_loss_var, q_loss_var, reg_loss_var, soft_target, temperature_loss_var, CriticSample, RegSample, RegTerms,
};
pub use nets::{actor_forward, critic_forward, init_actor, init_critic, init_planner, planner_forward, NetShape, PlannerVars};
pub use policy::{sample_plan, sample_plan_var, Plan, PlannerOutput, SQUASH_EPS};
pub use replay::ReplayPool;
pub use trainer::{
    seeded_stream, Agent, EvalResult, LossReport, Optimizers, RegContext, STREAM_DATA, STREAM_INIT, STREAM_NOISE,
    STREAM_POOL,
};

use crate::error::{Error, Result};

/// Which losses a gradient step applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Critic, planner, registration and temperature updates.
    Spac,
    /// Registration loss only.
    NoRl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Spac => "spac",
            Mode::NoRl => "no-rl",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spac" => Ok(Mode::Spac),
            "no-rl" | "no-rl-ablation" => Ok(Mode::NoRl),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected spac, no-rl or no-rl-ablation)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub plan_dim: usize,
    /// Per-step displacement cap in pixels.
    pub max_step_disp: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub batch_size: usize,
    pub pool_capacity: usize,
    pub lr_critic: f64,
    pub lr_planner: f64,
    pub lr_reg: f64,
    pub lr_alpha: f64,
    pub init_alpha: f64,
    pub grad_steps_per_env_step: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl TrainConfig {
    /// Defaults for images `width` pixels wide.
    pub fn for_width(width: usize) -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            plan_dim: 64,
            max_step_disp: 0.1 * width as f64,
            lambda: 1.0,
            horizon: 10,
            batch_size: 32,
            pool_capacity: 20_000,
            lr_critic: 1e-4,
            lr_planner: 1e-4,
            lr_reg: 1e-4,
            lr_alpha: 3e-4,
            init_alpha: 0.1,
            grad_steps_per_env_step: 1,
            seed: 0,
            mode: Mode::Spac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.max_step_disp > 0.0 && self.max_step_disp.is_finite()) {
            return bad(format!("max_step_disp must be positive, got {}", self.max_step_disp));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return bad(format!("init_alpha must be positive, got {}", self.init_alpha));
        }
        for (name, lr) in [
            ("lr_critic", self.lr_critic),
            ("lr_planner", self.lr_planner),
            ("lr_reg", self.lr_reg),
            ("lr_alpha", self.lr_alpha),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be non-negative, got {lr}"));
            }
        }
        for (name, n) in [
            ("plan_dim", self.plan_dim),
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
            ("pool_capacity", self.pool_capacity),
        ] {
            if n == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}
