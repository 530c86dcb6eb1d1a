//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] records every tensor produced during a forward pass together
//! with a gradient closure per node. [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients in node order, which makes a backward
//! pass bit-deterministic for a fixed forward program.

mod conv;
mod ops;

pub use conv::*;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};

pub type VarId = usize;

/// Gradient rule of a single tape node.
pub trait GradFn<S: Scalar> {
    fn name(&self) -> &'static str {
        std::any::type_name::<Self>()
    }
    /// Returns gradients with respect to each parent, in parent order.
    fn backward(
        &self,
        grad_out: &ArrayD<S>,
        inputs: &[&ArrayD<S>],
        output: &ArrayD<S>,
    ) -> Vec<ArrayD<S>>;
}

impl<S: Scalar, F> GradFn<S> for F
where
    F: Fn(&ArrayD<S>, &[&ArrayD<S>], &ArrayD<S>) -> Vec<ArrayD<S>>,
{
    fn backward(
        &self,
        grad_out: &ArrayD<S>,
        inputs: &[&ArrayD<S>],
        output: &ArrayD<S>,
    ) -> Vec<ArrayD<S>> {
        self(grad_out, inputs, output)
    }
}

pub static PROF: std::sync::Mutex<Option<std::collections::HashMap<&'static str, (f64, u64)>>> =
    std::sync::Mutex::new(None);

fn prof_add(name: &'static str, secs: f64) {
    if let Some(map) = std::sync::Mutex::lock(&PROF).unwrap().as_mut() {
        let e = map.entry(name).or_insert((0.0, 0));
        e.0 += secs;
        e.1 += 1;
    }
}

struct Node<S: Scalar> {
    value: ArrayD<S>,
    parents: Vec<VarId>,
    grad_fn: Option<Box<dyn GradFn<S>>>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Gradients of one backward pass, indexed by the forward tape.
pub struct Grads<S: Scalar> {
    grads: Vec<Option<ArrayD<S>>>,
}

impl<S: Scalar> Grads<S> {
    /// Gradient with respect to `id`, zero-filled if the node was unreachable.
    pub fn wrt(&self, id: VarId, shape: &[usize]) -> ArrayD<S> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn get(&self, id: VarId) -> Option<&ArrayD<S>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Introduces a tensor with no gradient rule (leaf or constant).
    pub fn leaf(&mut self, value: ArrayD<S>) -> VarId {
        self.push(value, Vec::new(), None)
    }

    pub fn value(&self, id: VarId) -> &ArrayD<S> {
        &self.nodes[id].value
    }

    /// Extracts a scalar from a 0-dim or single-element node.
    pub fn scalar(&self, id: VarId) -> S {
        let v = &self.nodes[id].value;
        debug_assert_eq!(v.len(), 1, "scalar() on a non-scalar node");
        *v.iter().next().expect("empty tensor")
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<S>,
        parents: Vec<VarId>,
        grad_fn: Option<Box<dyn GradFn<S>>>,
    ) -> VarId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            parents,
            grad_fn,
        });
        id
    }

    /// Reverse pass from a scalar root. Gradients accumulate in strict
    /// reverse tape order, so results are reproducible bit-for-bit.
    pub fn backward(&self, root: VarId) -> Result<Grads<S>> {
        if self.nodes[root].value.len() != 1 {
            return Err(shape_err(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<ArrayD<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(ArrayD::ones(self.nodes[root].value.raw_dim()));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(grad_fn) = &self.nodes[id].grad_fn {
                let node = &self.nodes[id];
                let inputs: Vec<&ArrayD<S>> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let t0 = std::time::Instant::now();
                let parent_grads = grad_fn.backward(&g, &inputs, &node.value);
                prof_add(grad_fn.name(), t0.elapsed().as_secs_f64());
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    debug_assert_eq!(
                        pg.shape(),
                        self.nodes[p].value.shape(),
                        "gradient shape mismatch for parent {p}"
                    );
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }
}
