//! End-to-end finite-difference cases for the three networks through each
//! training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spac_core::agent::{
    init_actor, init_critic, init_planner, planner_loss_var, q_loss_var, reg_loss_var, CriticSample, NetShape,
    RegSample,
};
use spac_core::substrate::{
    gradient_check, Bound, GradCheckOptions, GradCheckReport, Graph, ParameterSet, Real, ScalarFn, Tensor, Var,
};
use spac_core::Result;

use super::smooth_field;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetLoss {
    /// Critic parameters through the soft Bellman residual.
    Critic,
    /// Planner parameters through the entropy-regularized policy loss.
    Planner,
    /// Planner and actor parameters through the registration loss.
    Registration,
}

/// Whole networks evaluate losses of order one whose smallest parameter
/// gradients sit near 1e-9, so the probe step is larger than for single
/// ops and the error floor is a tenth of each tensor's largest gradient.
pub const NET_STEP: f64 = 1e-4;
pub const NET_FLOOR: f64 = 0.1;

pub const NET_LOSSES: [NetLoss; 3] = [NetLoss::Critic, NetLoss::Planner, NetLoss::Registration];

pub struct NetCase {
    loss: NetLoss,
    /// Names of the checked inputs, split by network.
    trainable: Vec<Vec<String>>,
    frozen: Vec<ParameterSet<f64>>,
    batch: Vec<CriticSample<f64>>,
    noise: Vec<Vec<f64>>,
    reg: Option<RegSample<f64>>,
    max_disp: f64,
    window: usize,
}

fn jitter_biases(p: &mut ParameterSet<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in p.iter_mut() {
        if name.ends_with(".b") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[c, h, w], |_| rng.random_range(0.0..1.0))
}

fn frozen_bound<T: Real>(g: &mut Graph<'_, T>, p: &ParameterSet<f64>) -> Bound {
    let mut b = Bound::new();
    for (name, t) in p.iter() {
        let v = g.constant_copy(&t.cast::<T>());
        b.push(name, v);
    }
    b
}

fn cast_sample<T: Real>(s: &CriticSample<f64>) -> CriticSample<T> {
    CriticSample {
        state: s.state.cast(),
        plan: s.plan.cast(),
        reward: T::lit(s.reward),
        next_state: s.next_state.cast(),
        done: s.done,
    }
}

impl NetCase {
    pub fn random(loss: NetLoss, seed: u64) -> (Self, Vec<Tensor<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = [8, 12][rng.random_range(0..2)];
        let w = [8, 12][rng.random_range(0..2)];
        let plan_dim = rng.random_range(2..=5);
        let shape = NetShape::new(h, w, plan_dim).expect("valid shape");
        let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut planner = init_planner(&shape, &mut init).cast::<f64>();
        let mut actor = init_actor(&shape, &mut init).cast::<f64>();
        let mut critic = init_critic(&shape, &mut init).cast::<f64>();
        let mut target = init_critic(&shape, &mut init).cast::<f64>();
        for p in [&mut planner, &mut actor, &mut critic, &mut target] {
            jitter_biases(p, &mut rng);
        }
        // a larger output layer so the actor's field is not vanishingly small
        {
            let t = "out.w";
            actor
                .get_mut(t)
                .expect("actor output")
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= 200.0);
        }

        let batch: Vec<CriticSample<f64>> = (0..2)
            .map(|i| CriticSample {
                state: image(&mut rng, 2, h, w),
                plan: Tensor::from_fn(&[plan_dim], |_| rng.random_range(-0.9..0.9)),
                reward: rng.random_range(-0.2..0.2),
                next_state: image(&mut rng, 2, h, w),
                done: i == 1,
            })
            .collect();
        let noise = (0..2).map(|_| normal(&mut rng, plan_dim)).collect();
        let reg = {
            let fixed = image(&mut rng, 1, h, w);
            let moving = image(&mut rng, 1, h, w);
            let mut state = fixed.data().to_vec();
            state.extend_from_slice(moving.data());
            RegSample {
                state: Tensor::new(&[2, h, w], state).expect("state"),
                fixed,
                moving,
                omega_prev: smooth_field(&mut rng, h, w, 1.5),
            }
        };

        let names = |p: &ParameterSet<f64>| p.names().map(str::to_owned).collect::<Vec<_>>();
        let values = |p: &ParameterSet<f64>| p.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>();
        let (trainable, frozen, inputs) = match loss {
            NetLoss::Critic => (vec![names(&critic)], vec![planner, target], values(&critic)),
            NetLoss::Planner => (vec![names(&planner)], vec![critic], values(&planner)),
            NetLoss::Registration => {
                let mut v = values(&planner);
                v.extend(values(&actor));
                (vec![names(&planner), names(&actor)], vec![], v)
            }
        };
        let case = NetCase {
            loss,
            trainable,
            frozen,
            batch,
            noise,
            reg: Some(reg),
            max_disp: 2.0,
            window: 5,
        };
        (case, inputs)
    }

    fn bound(&self, x: &[Var]) -> Vec<Bound> {
        let mut out = Vec::new();
        let mut i = 0;
        for names in &self.trainable {
            let mut b = Bound::new();
            for n in names {
                b.push(n.clone(), x[i]);
                i += 1;
            }
            out.push(b);
        }
        out
    }
}

impl ScalarFn for NetCase {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, x: &[Var]) -> Result<Var> {
        let trained = self.bound(x);
        let frozen: Vec<Bound> = self.frozen.iter().map(|p| frozen_bound(g, p)).collect();
        let noise: Vec<Vec<T>> = self
            .noise
            .iter()
            .map(|n| n.iter().map(|v| T::lit(*v)).collect())
            .collect();
        match self.loss {
            NetLoss::Critic => {
                let batch: Vec<CriticSample<T>> = self.batch.iter().map(cast_sample).collect();
                let (loss, _) = q_loss_var(g, &trained[0], &frozen[1], &frozen[0], &batch, &noise, T::lit(0.2), T::lit(0.9))?;
                Ok(loss)
            }
            NetLoss::Planner => {
                let states: Vec<Tensor<T>> = self.batch.iter().map(|s| s.state.cast()).collect();
                let (loss, _) = planner_loss_var(g, &trained[0], &frozen[0], &states, &noise, T::lit(0.2))?;
                Ok(loss)
            }
            NetLoss::Registration => {
                let r = self.reg.as_ref().expect("registration context");
                let ctx = RegSample {
                    state: r.state.cast(),
                    fixed: r.fixed.cast(),
                    moving: r.moving.cast(),
                    omega_prev: r.omega_prev.cast(),
                };
                let terms = reg_loss_var(
                    g,
                    &trained[0],
                    &trained[1],
                    &ctx,
                    &noise[0],
                    T::lit(self.max_disp),
                    T::lit(0.5),
                    self.window,
                )?;
                Ok(terms.loss)
            }
        }
    }
}

/// Worst report over `instances` random networks for `loss`, checking at
/// most `coords` coordinates per parameter tensor.
pub fn net_sweep(loss: NetLoss, instances: u64, coords: usize) -> GradCheckReport {
    let opts = GradCheckOptions {
        step: NET_STEP,
        floor: NET_FLOOR,
        max_coords: Some(coords),
        ..GradCheckOptions::default()
    };
    let mut worst: Option<GradCheckReport> = None;
    for i in 0..instances {
        let (case, inputs) = NetCase::random(loss, 7_000 + 100 * (loss as u64) + i);
        let r = gradient_check(&case, &inputs, &GradCheckOptions { seed: i, ..opts.clone() }).expect("gradient check runs");
        if worst.as_ref().is_none_or(|w| r.max_rel_error > w.max_rel_error) {
            worst = Some(r);
        }
    }
    worst.expect("at least one instance")
}
