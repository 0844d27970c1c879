//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with the op that produced it. Leaves may borrow their storage from a
//! [`ParameterSet`] so binding a network costs no copies. [`Graph::backward`]
//! walks the record in reverse and returns the gradients of a scalar loss.

use std::borrow::Cow;
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{contract, Error, Result};

use super::kernels::{self, ConvGeometry};
use super::params::{Bound, ParameterSet};
use super::{numel, Real, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable op implemented outside the graph's built-in set.
///
/// The forward value is computed by the caller and handed to
/// [`Graph::custom`]; the op only supplies the vector-Jacobian product.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Adds `grad_output · ∂output/∂inputs[i]` into every `grad_inputs[i]`
    /// that is `Some`.
    fn backward(
        &self,
        inputs: &[&[T]],
        output: &[T],
        grad_output: &[T],
        grad_inputs: &mut [Option<Vec<T>>],
    );

    /// Pushes identifiers of the smooth piece the inputs fall in, for ops
    /// that are only piecewise differentiable.
    fn regions(&self, _inputs: &[&[T]], _out: &mut Vec<u64>) {}
}

enum Op<T: Real> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geo: ConvGeometry,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Slice {
        input: Var,
        start: usize,
    },
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<'a, T: Real> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded forward computation.
pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    checked: bool,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// A graph in checked mode: domain violations are reported as errors.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [T]>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a, T> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.to_vec()).expect("node shape is consistent")
    }

    // ── leaves ───────────────────────────────────────────────────────

    /// A leaf that borrows `tensor`; tracks gradients if the tensor does.
    pub fn input(&mut self, tensor: &'a Tensor<T>) -> Var {
        self.push(
            tensor.shape().to_vec(),
            Cow::Borrowed(tensor.data()),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// A leaf owning `tensor`, with its own `requires_grad` flag.
    pub fn input_owned(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(shape, Cow::Owned(tensor.into_data()), Op::Leaf, rg)
    }

    /// A gradient-free leaf.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        contract!(
            numel(shape) == data.len(),
            "constant of shape {:?} needs {} values, got {}",
            shape,
            numel(shape),
            data.len()
        );
        Ok(self.push(shape.to_vec(), Cow::Owned(data), Op::Leaf, false))
    }

    pub fn constant_tensor(&mut self, tensor: &'a Tensor<T>) -> Var {
        self.push(tensor.shape().to_vec(), Cow::Borrowed(tensor.data()), Op::Leaf, false)
    }

    /// A gradient-free leaf holding a copy of `tensor`.
    pub fn constant_copy(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(tensor.shape().to_vec(), Cow::Owned(tensor.data().to_vec()), Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, value: T) -> Var {
        self.push(vec![1], Cow::Owned(vec![value]), Op::Leaf, false)
    }

    /// Binds every parameter as a borrowed leaf that honours its `requires_grad` flag.
    pub fn bind(&mut self, params: &'a ParameterSet<T>) -> Bound {
        let mut bound = Bound::new();
        for (name, t) in params.iter() {
            bound.push(name, self.input(t));
        }
        bound
    }

    /// Binds every parameter as a constant: gradients still flow *through*
    /// ops that use them, but never *into* them.
    pub fn bind_frozen(&mut self, params: &'a ParameterSet<T>) -> Bound {
        let mut bound = Bound::new();
        for (name, t) in params.iter() {
            bound.push(name, self.constant_tensor(t));
        }
        bound
    }

    // ── structured ops ───────────────────────────────────────────────

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        let bs = self.shape(bias).to_vec();
        contract!(is.len() == 3, "conv2d input must be C×H×W, got {is:?}");
        contract!(ks.len() == 4, "conv2d kernel must be Cout×Cin×k×k, got {ks:?}");
        contract!(
            ks[1] == is[0],
            "conv2d channel mismatch: input has {} channels, kernel expects {}",
            is[0],
            ks[1]
        );
        contract!(ks[2] == ks[3] && ks[2] % 2 == 1, "conv2d kernel must be square with odd size, got {ks:?}");
        contract!(bs == [ks[0]], "conv2d bias must have shape [{}], got {bs:?}", ks[0]);
        contract!(stride >= 1, "conv2d stride must be ≥ 1");
        contract!(
            is[1] + 2 * padding >= ks[2] && is[2] + 2 * padding >= ks[2],
            "conv2d kernel {} larger than padded input {:?}",
            ks[2],
            is
        );
        let geo = ConvGeometry {
            c_in: is[0],
            h: is[1],
            w: is[2],
            c_out: ks[0],
            k: ks[2],
            stride,
            padding,
        };
        let out = kernels::conv2d_forward(&geo, self.value(input), self.value(kernel), self.value(bias));
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            vec![geo.c_out, geo.out_h(), geo.out_w()],
            Cow::Owned(out),
            Op::Conv2d { input, kernel, bias, geo },
            rg,
        ))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        contract!(s.len() == 3, "upsample input must be C×H×W, got {s:?}");
        contract!(factor >= 1, "upsample factor must be ≥ 1");
        let out = kernels::upsample_forward(self.value(input), s[0], s[1], s[2], factor);
        let rg = self.rg(&[input]);
        Ok(self.push(
            vec![s[0], s[1] * factor, s[2] * factor],
            Cow::Owned(out),
            Op::Upsample { input, factor },
            rg,
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        contract!(is.len() == 1, "linear input must be a vector, got {is:?}");
        contract!(
            ws.len() == 2 && ws[1] == is[0],
            "linear weight {ws:?} does not accept input of length {}",
            is[0]
        );
        contract!(bs == [ws[0]], "linear bias must have shape [{}], got {bs:?}", ws[0]);
        let out = kernels::linear_forward(self.value(input), self.value(weight), self.value(bias));
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(vec![ws[0]], Cow::Owned(out), Op::Linear { input, weight, bias }, rg))
    }

    // ── elementwise ──────────────────────────────────────────────────

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        contract!(
            self.shape(a) == self.shape(b),
            "{name}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), op, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out: Vec<T> = self.value(a).iter().map(|x| f(*x)).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.checked {
            if let Some(i) = self.value(b).iter().position(|v| *v == T::zero()) {
                return Err(Error::Domain(format!("division by zero at entry {i}")));
            }
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.checked {
            if let Some(i) = self.value(a).iter().position(|v| !(*v > T::zero())) {
                return Err(Error::Domain(format!(
                    "log of non-positive value {} at entry {i}",
                    self.value(a)[i]
                )));
            }
        }
        Ok(self.unary(a, |x| x.ln(), Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp { input: a, lo, hi })
    }

    // ── reductions and layout ────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for v in self.value(a) {
            acc += *v;
        }
        let rg = self.rg(&[a]);
        self.push(vec![1], Cow::Owned(vec![acc]), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::lit(self.value(a).len() as f64);
        let mut acc = T::zero();
        for v in self.value(a) {
            acc += *v;
        }
        let rg = self.rg(&[a]);
        self.push(vec![1], Cow::Owned(vec![acc / n]), Op::Mean(a), rg)
    }

    /// Concatenates along the leading axis; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        contract!(!parts.is_empty(), "concat of zero tensors");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        for p in parts {
            let s = self.shape(*p);
            contract!(
                s.len() == tail.len() + 1 && s[1..] == tail[..],
                "concat: trailing extents {:?} do not match {:?}",
                &s[1..],
                tail
            );
            lead += s[0];
        }
        let mut out = Vec::with_capacity(lead * numel(&tail));
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(shape, Cow::Owned(out), Op::Concat(parts.to_vec()), rg))
    }

    /// Channel concatenation of C×H×W tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        for p in parts {
            contract!(self.shape(*p).len() == 3, "concat_channels expects C×H×W, got {:?}", self.shape(*p));
        }
        self.concat(parts)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        contract!(
            numel(shape) == self.value(a).len(),
            "cannot reshape {:?} into {:?}",
            self.shape(a),
            shape
        );
        let data = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), Cow::Owned(data), Op::Reshape(a), rg))
    }

    /// Contiguous range `[start, start+len)` of the flattened tensor, as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(a).len();
        contract!(start + len <= n, "slice {start}..{} out of range for {n} elements", start + len);
        let data = self.value(a)[start..start + len].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![len], Cow::Owned(data), Op::Slice { input: a, start }, rg))
    }

    pub fn custom(&mut self, inputs: &[Var], shape: &[usize], value: Vec<T>, op: Box<dyn CustomOp<T>>) -> Result<Var> {
        contract!(
            numel(shape) == value.len(),
            "custom op {}: value length {} does not match shape {:?}",
            op.name(),
            value.len(),
            shape
        );
        let rg = self.rg(inputs);
        Ok(self.push(
            shape.to_vec(),
            Cow::Owned(value),
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    // ── reverse pass ─────────────────────────────────────────────────

    /// Reverse accumulation from a one-element `loss`.
    /// Identifies the piecewise-smooth region of every kinked op in the
    /// graph (relu sides, clamp bands, custom-op pieces). Two evaluations
    /// with equal signatures lie on the same smooth piece.
    pub fn region_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut buf = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => {
                    i.hash(&mut h);
                    for v in self.value(*a) {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    i.hash(&mut h);
                    for v in self.value(*input) {
                        let band: u8 = if *v < *lo { 0 } else if *v > *hi { 2 } else { 1 };
                        band.hash(&mut h);
                    }
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&[T]> = inputs.iter().map(|v| self.value(*v)).collect();
                    buf.clear();
                    op.regions(&vals, &mut buf);
                    if !buf.is_empty() {
                        i.hash(&mut h);
                        buf.hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        contract!(
            self.value(loss).len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.node(loss).requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Zero-initialized gradient slot for `v`, or `None` if `v` needs no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let n = &self.nodes[v.0];
        if !n.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]))
    }

    fn elementwise(&self, grads: &mut [Option<Vec<T>>], a: Var, g: &[T], d: impl Fn(usize) -> T) {
        if let Some(ga) = self.slot(grads, a) {
            for (i, (acc, gi)) in ga.iter_mut().zip(g).enumerate() {
                *acc += *gi * d(i);
            }
        }
    }

    fn broadcast(&self, grads: &mut [Option<Vec<T>>], a: Var, g: T) {
        if let Some(ga) = self.slot(grads, a) {
            for acc in ga.iter_mut() {
                *acc += g;
            }
        }
    }

    fn propagate(&self, node: &Node<'a, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geo } => {
                if let Some(gi) = self.slot(grads, *input) {
                    kernels::conv2d_backward_input(geo, self.value(*kernel), g, gi);
                }
                let x = self.value(*input);
                if let Some(gk) = self.slot(grads, *kernel) {
                    kernels::conv2d_backward_params(geo, x, g, Some(gk), None);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    kernels::conv2d_backward_params(geo, x, g, None, Some(gb));
                }
            }
            Op::Upsample { input, factor } => {
                let s = self.shape(*input).to_vec();
                if let Some(gi) = self.slot(grads, *input) {
                    kernels::upsample_backward(g, s[0], s[1], s[2], *factor, gi);
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let n = x.len();
                if let Some(gx) = self.slot(grads, *input) {
                    for (m, gm) in g.iter().enumerate() {
                        let row = &w[m * n..(m + 1) * n];
                        for (acc, wv) in gx.iter_mut().zip(row) {
                            *acc += *gm * *wv;
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, *weight) {
                    for (m, gm) in g.iter().enumerate() {
                        for (acc, xv) in gw[m * n..(m + 1) * n].iter_mut().zip(x) {
                            *acc += *gm * *xv;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for (acc, gm) in gb.iter_mut().zip(g) {
                        *acc += *gm;
                    }
                }
            }
            Op::Add(a, b) => {
                self.elementwise(grads, *a, g, |_| T::one());
                self.elementwise(grads, *b, g, |_| T::one());
            }
            Op::Sub(a, b) => {
                self.elementwise(grads, *a, g, |_| T::one());
                self.elementwise(grads, *b, g, |_| -T::one());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.elementwise(grads, *a, g, |i| bv[i]);
                self.elementwise(grads, *b, g, |i| av[i]);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.elementwise(grads, *a, g, |i| T::one() / bv[i]);
                self.elementwise(grads, *b, g, |i| -av[i] / (bv[i] * bv[i]));
            }
            Op::Scale(a, c) => self.elementwise(grads, *a, g, |_| *c),
            Op::AddScalar(a) => self.elementwise(grads, *a, g, |_| T::one()),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i| if av[i] > T::zero() { T::one() } else { T::zero() });
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i| if av[i] > T::zero() { T::one() } else { *slope });
            }
            Op::Tanh(a) => self.elementwise(grads, *a, g, |i| T::one() - out[i] * out[i]),
            Op::Softplus(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i| sigmoid(av[i]));
            }
            Op::Exp(a) => self.elementwise(grads, *a, g, |i| out[i]),
            Op::Log(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i| T::one() / av[i]);
            }
            Op::Square(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i| T::lit(2.0) * av[i]);
            }
            Op::Clamp { input, lo, hi } => {
                let av = self.value(*input);
                self.elementwise(grads, *input, g, |i| {
                    if av[i] >= *lo && av[i] <= *hi {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Sum(a) => self.broadcast(grads, *a, g[0]),
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).len() as f64);
                self.broadcast(grads, *a, g[0] / n);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.slot(grads, *p) {
                        for (acc, gi) in gp.iter_mut().zip(&g[off..off + len]) {
                            *acc += *gi;
                        }
                    }
                    off += len;
                }
            }
            Op::Reshape(a) => self.elementwise(grads, *a, g, |_| T::one()),
            Op::Slice { input, start } => {
                if let Some(gi) = self.slot(grads, *input) {
                    for (acc, gv) in gi[*start..*start + g.len()].iter_mut().zip(g) {
                        *acc += *gv;
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&[T]> = inputs.iter().map(|v| self.value(*v)).collect();
                let mut local: Vec<Option<Vec<T>>> = inputs
                    .iter()
                    .map(|v| {
                        self.requires_grad(*v)
                            .then(|| vec![T::zero(); self.value(*v).len()])
                    })
                    .collect();
                op.backward(&values, out, g, &mut local);
                for (v, lg) in inputs.iter().zip(local) {
                    if let (Some(lg), Some(acc)) = (lg, self.slot(grads, *v)) {
                        for (a, d) in acc.iter_mut().zip(&lg) {
                            *a += *d;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
