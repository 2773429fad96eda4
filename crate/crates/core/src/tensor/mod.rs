//! Dense rank-4 tensors of `f64` with a reverse-mode gradient engine.
//!
//! Every tensor has the layout `(batch, channel, height, width)` stored
//! row-major. Convolution weights reuse the same layout as
//! `(out_channels, in_channels, kernel_h, kernel_w)` and biases are stored as
//! `(1, C, 1, 1)` so that one type carries every value in the network.
//!
//! Operations build a graph only when at least one input requires a gradient.
//! [`Tensor::backward`] walks that graph in reverse topological order and
//! *adds* the result into each tensor's gradient buffer, so calling it twice
//! without [`Tensor::zero_grad`] doubles the stored gradients.

mod conv;
mod elementwise;
mod linalg;
mod pool;
mod reduce;
mod resize;
mod shape_ops;
mod stencil;

pub mod checkpoint;
pub mod gradcheck;
pub mod init;

#[cfg(feature = "fault-injection")]
pub mod fault;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::{conv2d, ConvParams, PadMode};
pub use linalg::softmax_rows;
pub use pool::PoolKind;
pub use stencil::{gaussian_kernel, LAPLACIAN, SOBEL_X, SOBEL_Y};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([b, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn b(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Size of one `(h, w)` plane.
    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.0;
        [c * h * w, h * w, w, 1]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [b, c, h, w] = self.0;
        write!(f, "({b}, {c}, {h}, {w})")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Receives the output gradient and the output values; returns one gradient
/// per parent (in parent order), `None` where a parent needs none.
type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Reference-counted immutable tensor. Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.node.as_ref().map_or("leaf", |n| n.op);
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn build(shape: Shape, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Self::build(shape, data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn parameter(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "Tensor::parameter",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Self::build(shape, data, true, None))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::build(shape, vec![0.0; shape.numel()], false, None)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self::build(shape, vec![value; shape.numel()], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let [b, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for ib in 0..b {
            for ic in 0..c {
                for ih in 0..h {
                    for iw in 0..w {
                        data.push(f([ib, ic, ih, iw]));
                    }
                }
            }
        }
        Self::build(shape, data, false, None)
    }

    /// Records an operation. A graph node is attached only when some parent
    /// requires a gradient.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<f64>,
        op: &'static str,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node {
            op,
            parents,
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, node)
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Stable identity of this tensor's storage.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    pub fn at(&self, idx: [usize; 4]) -> f64 {
        let s = self.0.shape.strides();
        self.0.data[idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2] + idx[3]]
    }

    /// One `(h, w)` plane as a slice.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.0.shape.plane();
        let start = (b * self.0.shape.c() + c) * p;
        &self.0.data[start..start + p]
    }

    /// Stored gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Stored gradient, or zeros when this tensor was not on a loss path.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Copy with no graph history; gradients do not flow through it.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape, self.0.data.clone(), false, None)
    }

    /// Same values as a fresh gradient-tracking leaf.
    pub fn to_parameter(&self) -> Tensor {
        Self::build(self.0.shape, self.0.data.clone(), true, None)
    }

    pub fn has_non_finite(&self) -> bool {
        self.0.data.iter().any(|v| !v.is_finite())
    }

    /// Back-propagates from a scalar. Gradients are added into every tensor
    /// on the path that requires them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS; `order` ends with `self`.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if seen.insert(t.id(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !seen.contains_key(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let g = match pending.remove(&t.id()) {
                Some(g) => g,
                None => vec![0.0; t.numel()],
            };
            if let Some(node) = &t.0.node {
                let parent_grads = (node.backward)(&g, &t.0.data);
                debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "{}", node.op);
                    match pending.get_mut(&p.id()) {
                        Some(acc) => add_into(acc, &pg),
                        None => {
                            pending.insert(p.id(), pg);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.lock().expect("grad lock poisoned");
            match slot.as_mut() {
                Some(acc) => add_into(acc, &g),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Anything that owns named trainable tensors.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    /// `(name, tensor)` pairs in visiting order.
    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

impl Params for ConvParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        ConvParams::visit(self, prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        ConvParams::visit_mut(self, prefix, f)
    }
}

/// Joins a parameter prefix and a child name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Stacks single-image constant tensors along the batch axis.
pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::Invalid("stack_batch of zero tensors".into()))?
        .shape();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        let s = t.shape();
        if s.0[1..] != first.0[1..] {
            return Err(Error::shape(
                "stack_batch",
                format!("{s} does not match {first}"),
            ));
        }
        data.extend_from_slice(t.data());
    }
    let b: usize = items.iter().map(|t| t.shape().b()).sum();
    Tensor::new(Shape::new(b, first.c(), first.h(), first.w()), data)
}
