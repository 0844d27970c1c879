//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};

use super::{Graph, Real, Tensor, Var};

/// A scalar-valued function that can be evaluated at either precision.
pub trait ScalarFn {
    /// Builds the function on `g` from the checked inputs and returns the
    /// one-element output.
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<Var>;
}

/// Precision of the reverse-mode side of a check. Central differences are
/// always taken in `f64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub precision: Precision,
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Relative-error floor as a fraction of the input's largest gradient
    /// magnitude. `1.0` makes the error normwise per input tensor.
    pub floor: f64,
    /// Check at most this many coordinates per input, sampled without
    /// replacement; `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            precision: Precision::F64,
            step: 1e-6,
            tolerance: 1e-5,
            floor: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

impl GradCheckOptions {
    pub fn f32_mode() -> Self {
        Self {
            precision: Precision::F32,
            tolerance: 1e-3,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates left out because every trial step crossed a kink.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

/// Compares reverse-mode gradients of `f` against `f64` central differences.
///
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, floor)`
/// where `floor` is `opts.floor` times the largest gradient magnitude of that
/// input; this keeps near-zero coordinates from dominating the report.
///
/// A central difference is only taken when both probes land on the same
/// smooth piece as the base point (see [`Graph::region_signature`]). If
/// they do not, the step shrinks tenfold, twice; a coordinate that still
/// straddles a kink is counted in `skipped`.
pub fn gradient_check<F: ScalarFn>(f: &F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    for (i, t) in inputs.iter().enumerate() {
        t.check_finite(&format!("gradient_check input {i}"))?;
    }
    contract!(opts.step > 0.0, "finite-difference step must be positive");

    let analytic: Vec<Vec<f64>> = match opts.precision {
        Precision::F64 => analytic_grads::<f64, F>(f, inputs)?,
        Precision::F32 => analytic_grads::<f32, F>(f, inputs)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tolerance: opts.tolerance,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let (_, base_region) = eval_f64(f, &work)?;
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let x0 = input.data()[c];
            let mut estimate = None;
            let mut step = opts.step;
            for _ in 0..3 {
                work[ii].data_mut()[c] = x0 + step;
                let (fp, rp) = eval_f64(f, &work)?;
                work[ii].data_mut()[c] = x0 - step;
                let (fm, rm) = eval_f64(f, &work)?;
                if rp == base_region && rm == base_region {
                    estimate = Some((fp - fm) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
            work[ii].data_mut()[c] = x0;
            numeric.push(estimate);
        }
        let scale = numeric
            .iter()
            .flatten()
            .chain(&analytic[ii])
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (opts.floor * scale).max(1e-12);
        for (&c, num) in coords.iter().zip(&numeric) {
            let a = analytic[ii][c];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient of input {ii} at {c} is {a}")));
            }
            let Some(num) = num else {
                report.skipped += 1;
                continue;
            };
            let err = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ii, c));
            }
        }
    }
    Ok(report)
}

fn analytic_grads<T: Real, F: ScalarFn>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>> {
    let cast: Vec<Tensor<T>> = inputs.iter().map(|t| t.cast::<T>().with_grad()).collect();
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = cast.iter().map(|t| g.input(t)).collect();
    let out = f.eval(&mut g, &vars)?;
    contract!(g.value(out).len() == 1, "gradient_check function must be scalar-valued");
    if !g.scalar(out).is_finite() {
        return Err(Error::NonFinite(format!("function value is {}", g.scalar(out))));
    }
    let grads = g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| match grads.get(*v) {
            Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect())
}

fn eval_f64<F: ScalarFn>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, u64)> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant_tensor(t)).collect();
    let out = f.eval(&mut g, &vars)?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("function value {v} during finite differences")));
    }
    Ok((v, g.region_signature()))
}
