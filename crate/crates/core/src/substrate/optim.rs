use crate::error::{contract, Error, Result};

use super::{ParameterSet, Real};

/// Moment estimates and hyper-parameters of one Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParameterSet<f32>, lr: f32) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.first, &self.second)
    }

    /// Rebuilds a state from persisted parts; shapes are checked against `params`.
    pub fn from_parts(
        params: &ParameterSet<f32>,
        hyper: [f32; 4],
        step: u64,
        first: Vec<Vec<f32>>,
        second: Vec<Vec<f32>>,
    ) -> Result<Self> {
        contract!(
            first.len() == params.len() && second.len() == params.len(),
            "adam state has {} moments for {} parameters",
            first.len(),
            params.len()
        );
        for (((name, t), m), v) in params.iter().zip(&first).zip(&second) {
            contract!(
                m.len() == t.len() && v.len() == t.len(),
                "adam moment size mismatch for `{name}`"
            );
        }
        let [lr, beta1, beta2, eps] = hyper;
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            first,
            second,
        })
    }
}

/// One bias-corrected Adam update; gradients are cleared afterwards.
///
/// Parameters that do not require gradients are skipped. A trainable
/// parameter without a populated gradient is a contract violation.
pub fn adam_step(params: &mut ParameterSet<f32>, state: &mut AdamState) -> Result<()> {
    contract!(
        state.first.len() == params.len(),
        "adam state tracks {} tensors, parameter set has {}",
        state.first.len(),
        params.len()
    );
    for (name, t) in params.iter() {
        if t.requires_grad() && t.grad().is_none() {
            return Err(Error::Contract(format!("parameter `{name}` has no gradient")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - (state.beta1 as f64).powi(t);
    let bc2 = 1.0 - (state.beta2 as f64).powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let step_size = (state.lr as f64 / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    for (((_, tensor), m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        if !tensor.requires_grad() {
            continue;
        }
        let grad = tensor.take_grad().expect("checked above");
        for (((p, g), mi), vi) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *p -= step_size * *mi / (vi.sqrt() / bc2_sqrt + state.eps);
        }
    }
    Ok(())
}

/// Exponential moving average `target ← τ·source + (1−τ)·target`.
pub fn polyak_update<T: Real>(target: &mut ParameterSet<T>, source: &ParameterSet<T>, tau: f64) -> Result<()> {
    contract!((0.0..=1.0).contains(&tau), "polyak tau must lie in [0, 1], got {tau}");
    target.check_same_layout(source)?;
    let tau_t = T::lit(tau);
    for ((_, t), (_, s)) in target.iter_mut().zip(source.iter()) {
        for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
            // incremental form: a target already equal to its source stays put
            *a = if tau == 1.0 { *b } else { *a + tau_t * (*b - *a) };
        }
    }
    Ok(())
}
