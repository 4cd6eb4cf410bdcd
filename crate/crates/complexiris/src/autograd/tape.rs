//! Reverse-mode differentiation over complex tensors.
//!
//! Gradients follow the real-pair convention: the gradient carried for
//! a complex quantity `w` is `dC/dRe(w) + i*dC/dIm(w)` for the real
//! scalar loss `C`. Each operation's backward rule is the transpose of
//! its real 2-plane Jacobian applied to that pair, composed
//! layer-to-layer; fan-out accumulates additively.
//!
//! The tape records one forward pass and is replayed in reverse. It is
//! confined to a single training step and thread.

use std::cell::{Cell, RefCell};

use num_complex::Complex;

use crate::ctensor::{ComplexTensor, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a recorded node.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Backward rule of one recorded operation.
pub trait GradFn<F: Real> {
    /// Gradients for each parent given the output gradient. Entries
    /// where `needs[i]` is false may be `None`.
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        output: &ComplexTensor<F>,
        needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>>;

    fn name(&self) -> &'static str;
}

struct Node<F: Real> {
    value: ComplexTensor<F>,
    parents: Vec<usize>,
    grad_fn: Option<Box<dyn GradFn<F>>>,
    needs_grad: bool,
}

pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
    /// Smallest distance of any zReLU input component (or other
    /// decision margin noted by an op) to its decision boundary.
    /// Gradient checks resample when this is too small.
    stability_margin: Cell<f64>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            stability_margin: Cell::new(f64::INFINITY),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that does not require a gradient (data, frozen weights).
    pub fn constant(&self, value: ComplexTensor<F>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&self, value: ComplexTensor<F>) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    pub fn value(&self, v: Var) -> ComplexTensor<F> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Shape {
        self.nodes.borrow()[v.0].value.shape().clone()
    }

    /// Record an operation node. Used by the op wrappers in this crate.
    pub(crate) fn record(
        &self,
        value: ComplexTensor<F>,
        parents: Vec<Var>,
        grad_fn: Box<dyn GradFn<F>>,
    ) -> Var {
        let ids: Vec<usize> = parents.iter().map(|p| p.0).collect();
        let needs = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&p| nodes[p].needs_grad)
        };
        self.push(value, ids, Some(grad_fn), needs)
    }

    fn push(
        &self,
        value: ComplexTensor<F>,
        parents: Vec<usize>,
        grad_fn: Option<Box<dyn GradFn<F>>>,
        needs_grad: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        // Parents always precede children, which keeps the graph acyclic
        // and the reverse scan topological.
        assert!(parents.iter().all(|&p| p < id), "tape graph must be acyclic");
        nodes.push(Node {
            value,
            parents,
            grad_fn,
            needs_grad,
        });
        Var(id)
    }

    /// Record a decision-boundary margin observed during the forward
    /// pass (zReLU components, hinge and argmin gaps, ...).
    pub fn note_margin(&self, margin: f64) {
        if margin < self.stability_margin.get() {
            self.stability_margin.set(margin);
        }
    }

    pub fn stability_margin(&self) -> f64 {
        self.stability_margin.get()
    }

    /// Back-propagate from a real scalar loss node. Returns per-node
    /// gradients for every leaf declared with [`Tape::param`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.value.im()[0].is_zero() {
            return Err(Error::invalid(
                "backward needs a real loss (imaginary part must be identically 0)",
            ));
        }

        let n = nodes.len();
        let mut grads: Vec<Option<ComplexTensor<F>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(ComplexTensor::filled(
            loss_node.value.shape().clone(),
            Complex::new(F::one(), F::zero()),
        ));

        for id in (0..n).rev() {
            if !nodes[id].needs_grad && nodes[id].grad_fn.is_some() {
                grads[id] = None;
                continue;
            }
            let Some(grad_fn) = nodes[id].grad_fn.as_ref() else {
                continue; // leaf: keep any accumulated gradient
            };
            let Some(g) = grads[id].take() else {
                continue; // no path from the loss to this node
            };
            let parent_ids = &nodes[id].parents;
            let parent_vals: Vec<&ComplexTensor<F>> =
                parent_ids.iter().map(|&p| &nodes[p].value).collect();
            let needs: Vec<bool> = parent_ids.iter().map(|&p| nodes[p].needs_grad).collect();
            let pgrads = grad_fn.backward(&g, &parent_vals, &nodes[id].value, &needs)?;
            debug_assert_eq!(pgrads.len(), parent_ids.len(), "{}", grad_fn.name());
            for (&pid, pg) in parent_ids.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                match &mut grads[pid] {
                    Some(acc) => acc.acc(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass: gradient per requested node.
pub struct Gradients<F> {
    grads: Vec<Option<ComplexTensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&ComplexTensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a param, or zeros when the loss does not reach it.
    pub fn get_or_zeros(&self, v: Var, shape: &Shape) -> ComplexTensor<F> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| ComplexTensor::zeros(shape.clone()))
    }
}
