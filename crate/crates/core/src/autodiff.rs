//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar node walks the records in reverse and
//! accumulates adjoints. Only nodes that depend on a [`Tape::param`] leaf
//! receive gradients; constants are skipped entirely.
//!
//! Model code is written once against the [`Ops`] trait and runs either
//! eagerly on plain tensors ([`Eager`]) or recorded on a tape (`&Tape`).

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{self, forward_primitive, gemm, Operand, OpKind, Tensor};

#[derive(Clone, Copy, Debug)]
struct Node {
    kind: Option<OpKind>,
    inputs: [usize; 2],
    needs_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
    /// Per-node forward by-products the backward pass reuses (the sigmoid
    /// of a SiLU input).
    aux: Vec<Option<Tensor>>,
}

/// A single-threaded record of primitive operations.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// A handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node, value: Tensor, aux: Option<Tensor>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.values.push(value);
        inner.aux.push(aux);
        Var { tape: self, id: inner.nodes.len() - 1 }
    }

    /// A leaf that gradients are computed for.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Node { kind: None, inputs: [0; 2], needs_grad: true }, value, None)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node { kind: None, inputs: [0; 2], needs_grad: false }, value, None)
    }

    /// Applies a primitive and records it.
    pub fn apply<'t>(&'t self, kind: OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        if inputs.len() != kind.arity() {
            return Err(Error::shape(kind.name(), format!("expected {} inputs, got {}", kind.arity(), inputs.len())));
        }
        let (value, aux, needs_grad) = {
            let inner = self.inner.borrow();
            let needs_grad = inputs.iter().any(|v| inner.nodes[v.id].needs_grad);
            let refs: Vec<&Tensor> = inputs.iter().map(|v| &inner.values[v.id]).collect();
            if kind == OpKind::Silu && needs_grad {
                let (y, s) = tensor::silu_parts(refs[0]);
                (y, Some(s), needs_grad)
            } else {
                (forward_primitive(kind, &refs)?, None, needs_grad)
            }
        };
        let mut ids = [0; 2];
        for (slot, v) in ids.iter_mut().zip(inputs) {
            debug_assert!(std::ptr::eq(v.tape, self), "variable from another tape");
            *slot = v.id;
        }
        Ok(self.push(Node { kind: Some(kind), inputs: ids, needs_grad }, value, aux))
    }

    /// Recomputes every recorded node from the leaves and returns the values.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let inner = self.inner.borrow();
        let mut out: Vec<Tensor> = Vec::with_capacity(inner.nodes.len());
        for (id, node) in inner.nodes.iter().enumerate() {
            let value = match node.kind {
                None => inner.values[id].clone(),
                Some(kind) => {
                    let refs: Vec<&Tensor> = node.inputs[..kind.arity()].iter().map(|&i| &out[i]).collect();
                    forward_primitive(kind, &refs)?
                }
            };
            out.push(value);
        }
        Ok(out)
    }

    /// Propagates adjoints from a scalar `loss` back to every leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let loss_value = &inner.values[loss.id];
        if loss_value.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got shape {:?}", loss_value.shape())));
        }
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.id] = Some(Tensor::full(loss_value.shape().to_vec(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = inner.nodes[id];
            let Some(kind) = node.kind else { continue };
            let Some(g) = grads[id].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            let [ia, ib] = node.inputs;
            let wants = |i: usize| inner.nodes[i].needs_grad;
            let a = &inner.values[ia];
            match kind {
                OpKind::MatMul => {
                    let b = &inner.values[ib];
                    let (m, k) = (a.rows(), a.cols());
                    let nn = b.cols();
                    if wants(ia) {
                        let slot = zeroed_slot(&mut grads, ia, a.shape());
                        gemm(m, nn, k, Operand::plain(g.data(), nn), Operand::transposed(b.data(), nn), slot.data_mut(), true);
                    }
                    if wants(ib) {
                        let slot = zeroed_slot(&mut grads, ib, b.shape());
                        gemm(k, m, nn, Operand::transposed(a.data(), k), Operand::plain(g.data(), nn), slot.data_mut(), true);
                    }
                }
                OpKind::Add => {
                    if wants(ia) {
                        accumulate(&mut grads, ia, &g, 1.0);
                    }
                    if wants(ib) {
                        accumulate(&mut grads, ib, &g, 1.0);
                    }
                }
                OpKind::BroadcastAdd => {
                    if wants(ib) {
                        let cols = g.cols();
                        let slot = zeroed_slot(&mut grads, ib, inner.values[ib].shape());
                        let acc = slot.data_mut();
                        for r in 0..g.rows() {
                            for (s, v) in acc.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                                *s += v;
                            }
                        }
                    }
                    if wants(ia) {
                        accumulate(&mut grads, ia, &g, 1.0);
                    }
                }
                OpKind::Mul => {
                    let b = &inner.values[ib];
                    if wants(ia) {
                        accumulate_with(&mut grads, ia, &g, |i, gv| gv * b.data()[i]);
                    }
                    if wants(ib) {
                        accumulate_with(&mut grads, ib, &g, |i, gv| gv * a.data()[i]);
                    }
                }
                OpKind::ScalarMul(c) => accumulate(&mut grads, ia, &g, c),
                OpKind::Concat => {
                    let b = &inner.values[ib];
                    let (ca, cb) = (a.cols(), b.cols());
                    let width = ca + cb;
                    if wants(ia) {
                        let slot = zeroed_slot(&mut grads, ia, a.shape());
                        for r in 0..a.rows() {
                            for (s, v) in slot.row_mut(r).iter_mut().zip(&g.data()[r * width..r * width + ca]) {
                                *s += v;
                            }
                        }
                    }
                    if wants(ib) {
                        let slot = zeroed_slot(&mut grads, ib, b.shape());
                        for r in 0..b.rows() {
                            for (s, v) in slot.row_mut(r).iter_mut().zip(&g.data()[r * width + ca..(r + 1) * width]) {
                                *s += v;
                            }
                        }
                    }
                }
                OpKind::Tanh => {
                    let y = &inner.values[id];
                    accumulate_with(&mut grads, ia, &g, |i, gv| {
                        let t = y.data()[i];
                        gv * (1.0 - t * t)
                    });
                }
                OpKind::Silu => {
                    let s = inner.aux[id].as_ref().expect("silu records its sigmoid");
                    accumulate_with(&mut grads, ia, &g, |i, gv| {
                        let (x, s) = (a.data()[i], s.data()[i]);
                        gv * s * (1.0 + x * (1.0 - s))
                    });
                }
                OpKind::Sum => {
                    let gv = g.item();
                    let slot = zeroed_slot(&mut grads, ia, a.shape());
                    slot.data_mut().iter_mut().for_each(|s| *s += gv);
                }
                OpKind::Mean => {
                    let gv = g.item() / a.len() as f64;
                    let slot = zeroed_slot(&mut grads, ia, a.shape());
                    slot.data_mut().iter_mut().for_each(|s| *s += gv);
                }
                OpKind::SquaredError => {
                    let b = &inner.values[ib];
                    let gv = g.item();
                    if wants(ia) {
                        let slot = zeroed_slot(&mut grads, ia, a.shape());
                        for ((s, x), y) in slot.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                            *s += 2.0 * (x - y) * gv;
                        }
                    }
                    if wants(ib) {
                        let slot = zeroed_slot(&mut grads, ib, b.shape());
                        for ((s, x), y) in slot.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                            *s -= 2.0 * (x - y) * gv;
                        }
                    }
                }
            }
        }

        // Only leaves keep their adjoints; interior ones were consumed above.
        let grads = grads
            .into_iter()
            .zip(&inner.nodes)
            .map(|(g, node)| if node.kind.is_none() { g } else { None })
            .collect();
        let shapes = inner.values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn zeroed_slot<'g>(grads: &'g mut [Option<Tensor>], id: usize, shape: &[usize]) -> &'g mut Tensor {
    grads[id].get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: &Tensor, scale: f64) {
    match &mut grads[id] {
        Some(acc) => {
            for (s, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *s += scale * v;
            }
        }
        slot @ None => {
            *slot = Some(if scale == 1.0 { g.clone() } else { g.map(|v| scale * v) });
        }
    }
}

fn accumulate_with(grads: &mut [Option<Tensor>], id: usize, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
    let slot = grads[id].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
    for (i, (s, &gv)) in slot.data_mut().iter_mut().zip(g.data()).enumerate() {
        *s += f(i, gv);
    }
}

/// Adjoints of the tape's leaves with respect to one loss.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.id].clone()),
        }
    }

    /// Moves the gradient for a leaf out of the map.
    pub fn take(&mut self, v: Var<'_>) -> Tensor {
        match self.grads[v.id].take() {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[v.id].clone()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of this node's forward value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.inner.borrow(), |inner| &inner.values[self.id])
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(OpKind::MatMul, &[self, rhs])
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(OpKind::Add, &[self, rhs])
    }

    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(OpKind::BroadcastAdd, &[self, row])
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(OpKind::Mul, &[self, rhs])
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.apply(OpKind::ScalarMul(c), &[self]).expect("unary op")
    }

    pub fn concat(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(OpKind::Concat, &[self, rhs])
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.apply(OpKind::Tanh, &[self]).expect("unary op")
    }

    pub fn silu(self) -> Var<'t> {
        self.tape.apply(OpKind::Silu, &[self]).expect("unary op")
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.apply(OpKind::Sum, &[self]).expect("unary op")
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.tape.apply(OpKind::Mean, &[self])
    }

    pub fn squared_error(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(OpKind::SquaredError, &[self, rhs])
    }
}

/// Something that can evaluate primitives: plain tensors or a tape.
pub trait Ops: Copy {
    type Value: Clone;

    fn constant(self, value: Tensor) -> Self::Value;
    fn apply(self, kind: OpKind, inputs: &[&Self::Value]) -> Result<Self::Value>;
    fn shape(self, value: &Self::Value) -> Vec<usize>;

    fn matmul(self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    fn add(self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(OpKind::Add, &[a, b])
    }

    fn add_row(self, a: &Self::Value, row: &Self::Value) -> Result<Self::Value> {
        self.apply(OpKind::BroadcastAdd, &[a, row])
    }

    fn scale(self, a: &Self::Value, c: f64) -> Result<Self::Value> {
        self.apply(OpKind::ScalarMul(c), &[a])
    }

    fn concat(self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(OpKind::Concat, &[a, b])
    }

    /// `ca * a + cb * b`.
    fn lincomb(self, ca: f64, a: &Self::Value, cb: f64, b: &Self::Value) -> Result<Self::Value> {
        let sa = self.scale(a, ca)?;
        let sb = self.scale(b, cb)?;
        self.add(&sa, &sb)
    }
}

/// Eager evaluation on plain tensors, nothing recorded.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Ops for Eager {
    type Value = Tensor;

    fn constant(self, value: Tensor) -> Tensor {
        value
    }

    fn apply(self, kind: OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
        forward_primitive(kind, inputs)
    }

    fn shape(self, value: &Tensor) -> Vec<usize> {
        value.shape().to_vec()
    }

    fn lincomb(self, ca: f64, a: &Tensor, cb: f64, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| ca * x + cb * y).collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }
}

impl<'t> Ops for &'t Tape {
    type Value = Var<'t>;

    fn constant(self, value: Tensor) -> Var<'t> {
        Tape::constant(self, value)
    }

    fn apply(self, kind: OpKind, inputs: &[&Var<'t>]) -> Result<Var<'t>> {
        let vars: Vec<Var<'t>> = inputs.iter().map(|v| **v).collect();
        Tape::apply(self, kind, &vars)
    }

    fn shape(self, value: &Var<'t>) -> Vec<usize> {
        value.value().shape().to_vec()
    }
}

/// Compares reverse-mode gradients against central finite differences.
///
/// Returns the largest `|analytic - numeric| / max(1e-8, |numeric|)` over
/// every coordinate of every point, or NaN if `f` produced a non-finite
/// value anywhere.
pub fn grad_check<F>(f: F, points: &[Tensor], step: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = points.iter().map(|p| tape.param(p.clone())).collect();
        let loss = match f(&tape, &leaves) {
            Ok(l) => l,
            Err(_) => return f64::NAN,
        };
        if !loss.value().is_finite() {
            return f64::NAN;
        }
        match tape.backward(loss) {
            Ok(g) => leaves.iter().map(|&l| g.get(l)).collect(),
            Err(_) => return f64::NAN,
        }
    };

    let eval = |pts: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        match f(&tape, &leaves) {
            Ok(l) => l.value().item(),
            Err(_) => f64::NAN,
        }
    };

    let mut pts = points.to_vec();
    let mut worst: f64 = 0.0;
    for (leaf, grad) in analytic.iter().enumerate() {
        for i in 0..pts[leaf].len() {
            let orig = pts[leaf].data()[i];
            pts[leaf].data_mut()[i] = orig + step;
            let up = eval(&pts);
            pts[leaf].data_mut()[i] = orig - step;
            let down = eval(&pts);
            pts[leaf].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1e-8);
            if !err.is_finite() {
                return f64::NAN;
            }
            worst = worst.max(err);
        }
    }
    worst
}
