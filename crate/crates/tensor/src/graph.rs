//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Values are held
//! behind `Arc` so parameters can be registered without copying. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns a
//! gradient for every node that depends on a differentiable leaf.

use std::sync::Arc;

use crate::conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvSpec};
use crate::element::{matmul, Element, Trans};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    Deconv2d { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    Affine { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Mse { pred: Var, target: Var, mask: Option<Var>, count: usize },
    StopGradient,
    Reshape(Var),
    Concat { left: Var, right: Var },
    Add(Var, Var),
}

struct Node<E> {
    value: Arc<Tensor<E>>,
    op: Op,
    requires_grad: bool,
}

/// Evaluation tape.
pub struct Graph<E: Element = f32> {
    nodes: Vec<Node<E>>,
    stop_values: Vec<Arc<Tensor<E>>>,
    frozen_stops: Option<Vec<Arc<Tensor<E>>>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), stop_values: Vec::new(), frozen_stops: None }
    }

    /// A graph whose `stop_gradient` outputs are pinned, in creation order,
    /// to previously recorded values. Finite-difference probes use this so a
    /// perturbation cannot leak through a blocked branch.
    pub fn with_frozen_stops(values: Vec<Arc<Tensor<E>>>) -> Self {
        Graph { nodes: Vec::new(), stop_values: Vec::new(), frozen_stops: Some(values) }
    }

    /// Outputs of every `stop_gradient` call so far, in order.
    pub fn stop_gradient_values(&self) -> &[Arc<Tensor<E>>] {
        &self.stop_values
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<E>, op: Op, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor<E>>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Tensor<E>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    /// Differentiable leaf (parameter or probed input).
    pub fn leaf(&mut self, value: impl Into<Arc<Tensor<E>>>) -> Var {
        self.push_arc(value.into(), Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor<E>>>) -> Var {
        self.push_arc(value.into(), Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let y = conv2d_forward(self.value(input), &spec, self.value(weight), self.value(bias))?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(y, Op::Conv2d { input, weight, bias, spec }, rg))
    }

    pub fn deconv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let y = deconv2d_forward(self.value(input), &spec, self.value(weight), self.value(bias))?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(y, Op::Deconv2d { input, weight, bias, spec }, rg))
    }

    /// `W x + b` for `x` of shape `[N]` or `[B, N]`, `W` of shape `[M, N]`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = affine_forward(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(y, Op::Affine { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = relu(self.value(x));
        let rg = self.needs(x);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = sigmoid(self.value(x));
        let rg = self.needs(x);
        self.push(y, Op::Sigmoid(x), rg)
    }

    /// Mean squared error over the entries where `mask` is 1 (all entries
    /// when no mask is given). A fully masked-out loss is 0 with zero
    /// gradient.
    pub fn mse(&mut self, pred: Var, target: Var, mask: Option<Var>) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(TensorError::Shape(format!(
                "mse target shape {:?} differs from prediction {:?}",
                t.shape(),
                p.shape()
            )));
        }
        let m = match mask {
            Some(m) => {
                let m = self.value(m);
                if m.shape() != p.shape() {
                    return Err(TensorError::Shape(format!(
                        "mse mask shape {:?} differs from prediction {:?}",
                        m.shape(),
                        p.shape()
                    )));
                }
                Some(m)
            }
            None => None,
        };
        let (sum, count) = masked_sq_sum(p.data(), t.data(), m.map(|m| m.data()));
        let loss = if count == 0 { E::zero() } else { E::from_f64(sum / count as f64) };
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target, mask, count }, rg))
    }

    /// Identity on the forward pass; nothing flows back through it.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = match self.frozen_stops.as_ref() {
            Some(frozen) => Arc::clone(&frozen[self.stop_values.len()]),
            None => self.value_arc(x),
        };
        self.stop_values.push(Arc::clone(&value));
        self.push_arc(value, Op::StopGradient, false)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    /// Concatenates two `[B, N]` / `[B, M]` matrices into `[B, N + M]`.
    pub fn concat(&mut self, left: Var, right: Var) -> Result<Var> {
        let (a, b) = (self.value(left), self.value(right));
        let (ra, ca, cb) = match (a.shape(), b.shape()) {
            ([ra, ca], [rb, cb]) if ra == rb => (*ra, *ca, *cb),
            (sa, sb) => {
                return Err(TensorError::Shape(format!(
                    "concat needs [B, N] and [B, M] with equal B, got {sa:?} and {sb:?}"
                )))
            }
        };
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
        }
        let y = Tensor::new(&[ra, ca + cb], out)?;
        let rg = self.needs(left) || self.needs(right);
        Ok(self.push(y, Op::Concat { left, right }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::Shape(format!(
                "add of {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut out = x.clone();
        out.add_assign(y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar("loss", lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        if self.needs(loss) {
            grads[loss.0] = Some(Tensor::full(lv.shape(), E::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => grads[i] = Some(g),
                Op::StopGradient => {}
                Op::Conv2d { input, weight, bias, spec } => {
                    let (dx, dw, db) = conv2d_backward(
                        self.value(input),
                        &spec,
                        self.value(weight),
                        &g,
                        self.needs(input),
                    )?;
                    if let Some(dx) = dx {
                        accumulate(&mut grads, input, dx);
                    }
                    self.accumulate_if(&mut grads, weight, dw);
                    self.accumulate_if(&mut grads, bias, db);
                }
                Op::Deconv2d { input, weight, bias, spec } => {
                    let (dx, dw, db) = deconv2d_backward(
                        self.value(input),
                        &spec,
                        self.value(weight),
                        &g,
                        self.needs(input),
                    )?;
                    if let Some(dx) = dx {
                        accumulate(&mut grads, input, dx);
                    }
                    self.accumulate_if(&mut grads, weight, dw);
                    self.accumulate_if(&mut grads, bias, db);
                }
                Op::Affine { input, weight, bias } => {
                    let (dx, dw, db) = affine_backward(
                        self.value(input),
                        self.value(weight),
                        &g,
                        self.needs(input),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, input, dx);
                    }
                    self.accumulate_if(&mut grads, weight, dw);
                    self.accumulate_if(&mut grads, bias, db);
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                        if v <= E::zero() {
                            *d = E::zero();
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let mut dx = g;
                    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d = *d * s * (E::one() - s);
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Mse { pred, target, mask, count } => {
                    if count == 0 {
                        continue;
                    }
                    let scale = g.data()[0] * E::from_f64(2.0 / count as f64);
                    let (p, t) = (self.value(pred), self.value(target));
                    let m = mask.map(|m| self.value(m).data());
                    let mut dp = Tensor::zeros(p.shape());
                    for (k, d) in dp.data_mut().iter_mut().enumerate() {
                        let on = m.is_none_or(|m| m[k] != E::zero());
                        if on {
                            *d = scale * (p.data()[k] - t.data()[k]);
                        }
                    }
                    if self.needs(target) {
                        accumulate(&mut grads, target, dp.map(|v| -v));
                    }
                    if self.needs(pred) {
                        accumulate(&mut grads, pred, dp);
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(x).shape().to_vec();
                    accumulate(&mut grads, x, g.reshape(&shape)?);
                }
                Op::Concat { left, right } => {
                    let ca = self.value(left).shape()[1];
                    let cb = self.value(right).shape()[1];
                    let rows = g.shape()[0];
                    if self.needs(left) {
                        let mut d = Vec::with_capacity(rows * ca);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * (ca + cb)..r * (ca + cb) + ca]);
                        }
                        accumulate(&mut grads, left, Tensor::new(&[rows, ca], d)?);
                    }
                    if self.needs(right) {
                        let mut d = Vec::with_capacity(rows * cb);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                        }
                        accumulate(&mut grads, right, Tensor::new(&[rows, cb], d)?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate_if(&self, grads: &mut [Option<Tensor<E>>], v: Var, g: Tensor<E>) {
        if self.needs(v) {
            accumulate(grads, v, g);
        }
    }
}

fn accumulate<E: Element>(grads: &mut [Option<Tensor<E>>], v: Var, g: Tensor<E>) {
    match grads[v.0].as_mut() {
        Some(acc) => acc.add_assign(&g),
        None => grads[v.0] = Some(g),
    }
}

/// Gradients produced by [`Graph::backward`]. Only leaves keep theirs.
pub struct Gradients<E: Element = f32> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient of the loss with respect to `v`; `None` means zero.
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn masked_sq_sum<E: Element>(p: &[E], t: &[E], mask: Option<&[E]>) -> (f64, usize) {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for k in 0..p.len() {
        if mask.is_none_or(|m| m[k] != E::zero()) {
            let d = (p[k] - t[k]).as_f64();
            sum += d * d;
            count += 1;
        }
    }
    (sum, count)
}

pub fn relu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v > E::zero() { v } else { E::zero() })
}

pub fn sigmoid<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| E::one() / (E::one() + (-v).exp()))
}

fn affine_rows<E: Element>(input: &Tensor<E>, weight: &Tensor<E>) -> Result<(usize, usize, usize)> {
    let (out, inp) = match *weight.shape() {
        [m, n] => (m, n),
        ref s => return Err(TensorError::Shape(format!("affine weight must be [M, N], got {s:?}"))),
    };
    let rows = match *input.shape() {
        [n] if n == inp => 1,
        [b, n] if n == inp => b,
        ref s => {
            return Err(TensorError::Shape(format!(
                "affine input width: expected {inp}, got shape {s:?}"
            )))
        }
    };
    Ok((rows, inp, out))
}

/// `y = x W^T + b` on a batch of rows.
pub fn affine_forward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (rows, inp, out) = affine_rows(input, weight)?;
    if bias.shape() != [out] {
        return Err(TensorError::Shape(format!(
            "affine bias: expected [{out}], got {:?}",
            bias.shape()
        )));
    }
    let mut y = vec![E::zero(); rows * out];
    matmul(Trans::No, Trans::Yes, rows, inp, out, input.data(), weight.data(), &mut y, false);
    for row in y.chunks_mut(out) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    let shape: Vec<usize> = if input.rank() == 1 { vec![out] } else { vec![rows, out] };
    Tensor::new(&shape, y)
}

fn affine_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    need_input: bool,
) -> (Option<Tensor<E>>, Tensor<E>, Tensor<E>) {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let rows = input.len() / inp;
    let mut dw = Tensor::zeros(weight.shape());
    matmul(Trans::Yes, Trans::No, out, rows, inp, grad_out.data(), input.data(), dw.data_mut(), false);
    let mut db = Tensor::zeros(&[out]);
    for row in grad_out.data().chunks(out) {
        for (d, &g) in db.data_mut().iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    let dx = need_input.then(|| {
        let mut dx = Tensor::zeros(input.shape());
        matmul(Trans::No, Trans::No, rows, out, inp, grad_out.data(), weight.data(), dx.data_mut(), false);
        dx
    });
    (dx, dw, db)
}
