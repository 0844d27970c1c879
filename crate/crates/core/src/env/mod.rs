//! The step-wise registration MDP: pseudo-labels from K-means, Dice
//! rewards and bias-free state updates.

mod segment;

pub use segment::{dice, kmeans_segment, warp_labels, SegmentationMap, NUM_LABELS};

use std::sync::Arc;

use crate::agent::Plan;
use crate::error::{contract, Result};
use crate::image::Image;
use crate::substrate::Tensor;
use crate::warp::{compose_fields, warp_image, DisplacementField};

/// What the networks observe: the fixed image and the current warped moving image.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub fixed: Arc<Image>,
    pub moving: Arc<Image>,
}

impl State {
    pub fn dims(&self) -> (usize, usize) {
        self.fixed.dims()
    }

    /// The 2×H×W network input (fixed first).
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w) = self.dims();
        let mut data = Vec::with_capacity(2 * h * w);
        data.extend_from_slice(self.fixed.data());
        data.extend_from_slice(self.moving.data());
        Tensor::new(&[2, h, w], data).expect("two planes")
    }
}

/// One replay record.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: State,
    pub plan: Plan,
    pub action: DisplacementField,
    pub reward: f32,
    pub next_state: State,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    fixed: Arc<Image>,
    moving: Arc<Image>,
    omega: DisplacementField,
    t: usize,
    horizon: usize,
    seg_fixed: SegmentationMap,
    seg_moving: SegmentationMap,
    initial_dice: f64,
    prev_dice: f64,
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: State,
    pub reward: f64,
    pub done: bool,
    /// Dice after the step.
    pub dice: f64,
}

impl EpisodeState {
    pub fn fixed(&self) -> &Arc<Image> {
        &self.fixed
    }

    /// The original, never re-warped moving image.
    pub fn original_moving(&self) -> &Arc<Image> {
        &self.moving
    }

    /// Accumulated field Ω_t.
    pub fn omega(&self) -> &DisplacementField {
        &self.omega
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.horizon
    }

    pub fn seg_fixed(&self) -> &SegmentationMap {
        &self.seg_fixed
    }

    pub fn seg_moving(&self) -> &SegmentationMap {
        &self.seg_moving
    }

    pub fn initial_dice(&self) -> f64 {
        self.initial_dice
    }

    /// Dice at the current step.
    pub fn dice(&self) -> f64 {
        self.prev_dice
    }

    /// The observation for the current step.
    pub fn state(&self) -> Result<State> {
        let moving = if self.t == 0 {
            Arc::clone(&self.moving)
        } else {
            Arc::new(warp_image(&self.moving, &self.omega)?)
        };
        Ok(State {
            fixed: Arc::clone(&self.fixed),
            moving,
        })
    }

    /// Rebuilds an episode part-way through, as it would be after the
    /// steps that produced `omega`.
    pub fn resume(
        fixed: Arc<Image>,
        moving: Arc<Image>,
        horizon: usize,
        seed: u64,
        omega: DisplacementField,
        t: usize,
    ) -> Result<Self> {
        let (mut ep, _) = env_reset(fixed, moving, horizon, seed)?;
        contract!(t <= horizon, "resume step {t} beyond horizon {horizon}");
        contract!(omega.dims() == ep.fixed.dims(), "resume field has wrong dimensions");
        if t > 0 {
            ep.prev_dice = dice(&ep.seg_fixed, &warp_labels(&ep.seg_moving, &omega)?)?;
        }
        ep.omega = omega;
        ep.t = t;
        Ok(ep)
    }
}

/// Starts an episode: Ω_0 = 0 and both label maps computed once.
pub fn env_reset(fixed: Arc<Image>, moving: Arc<Image>, horizon: usize, seed: u64) -> Result<(EpisodeState, State)> {
    contract!(
        fixed.dims() == moving.dims(),
        "fixed {:?} and moving {:?} differ in size",
        fixed.dims(),
        moving.dims()
    );
    contract!(horizon >= 1, "horizon must be at least 1");
    let seg_fixed = kmeans_segment(&fixed, NUM_LABELS, seed)?;
    let seg_moving = kmeans_segment(&moving, NUM_LABELS, seed)?;
    let d0 = dice(&seg_fixed, &seg_moving)?;
    let (h, w) = fixed.dims();
    let state = State {
        fixed: Arc::clone(&fixed),
        moving: Arc::clone(&moving),
    };
    let ep = EpisodeState {
        fixed,
        moving,
        omega: DisplacementField::zeros(h, w),
        t: 0,
        horizon,
        seg_fixed,
        seg_moving,
        initial_dice: d0,
        prev_dice: d0,
    };
    Ok((ep, state))
}

/// Composes `action` into Ω, warps the original moving image once, and
/// rewards the change in Dice.
pub fn env_step(ep: &mut EpisodeState, action: &DisplacementField) -> Result<StepOutcome> {
    contract!(!ep.is_done(), "episode already finished at t = {}", ep.t);
    contract!(
        action.dims() == ep.omega.dims(),
        "action {:?} does not match episode {:?}",
        action.dims(),
        ep.omega.dims()
    );
    let omega = compose_fields(action, &ep.omega)?;
    let moving = warp_image(&ep.moving, &omega)?;
    let d = dice(&ep.seg_fixed, &warp_labels(&ep.seg_moving, &omega)?)?;
    let reward = d - ep.prev_dice;
    ep.omega = omega;
    ep.prev_dice = d;
    ep.t += 1;
    Ok(StepOutcome {
        state: State {
            fixed: Arc::clone(&ep.fixed),
            moving: Arc::new(moving),
        },
        reward,
        done: ep.is_done(),
        dice: d,
    })
}
