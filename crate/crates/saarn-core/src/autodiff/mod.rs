//! Reverse-mode automatic differentiation over `f64` dense arrays.
//!
//! A [`Graph`] is a single-use tape: ops execute eagerly, record their
//! parents and a backward closure, and [`Graph::backward`] replays the
//! tape in reverse to accumulate gradients. Everything is `f64` and
//! single-threaded, so a fixed seed and fixed inputs give bit-identical
//! results on one platform.
//!
//! Layout conventions used throughout the crate:
//! - visual feature maps are channels-last `(B, H, W, C)`
//! - token sequences are `(B, N, D)`
//! - scalars are 0-dimensional arrays
//!
//! Shape mismatches inside the engine are programming errors and panic;
//! the model-level operations validate their contracts and return
//! [`crate::error::Error`] before touching the tape.

mod ops;
pub mod gradcheck;

pub use ops::sigmoid;

use ndarray::ArrayD;

/// Index of a node on the tape.
pub type NodeId = usize;

pub(crate) struct BackCtx<'a> {
    /// Forward value of the node being differentiated.
    pub out: &'a ArrayD<f64>,
    /// Incoming gradient with the node's shape.
    pub grad: &'a ArrayD<f64>,
    /// Forward values of the node's parents, in recorded order.
    pub parents: &'a [&'a ArrayD<f64>],
    /// Which parents actually need a gradient.
    pub wants: &'a [bool],
}

pub(crate) type BackFn = Box<dyn Fn(&BackCtx) -> Vec<Option<ArrayD<f64>>>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<NodeId>,
    backward: Option<BackFn>,
    needs_grad: bool,
}

/// Single-use computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound_params: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that participates in differentiation.
    pub fn input(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Vec::new(), None, true)
    }

    /// Leaf excluded from differentiation (targets, masks, coordinate grids).
    pub fn constant(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Vec::new(), None, false)
    }

    /// Registers a parameter leaf under `name` so its gradient can be
    /// collected by name after [`Graph::backward`].
    pub fn named_input(&mut self, name: &str, value: ArrayD<f64>) -> NodeId {
        let id = self.input(value);
        self.bound_params.push((name.to_string(), id));
        id
    }

    pub fn bound_params(&self) -> &[(String, NodeId)] {
        &self.bound_params
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<f64>,
        parents: Vec<NodeId>,
        backward: Option<BackFn>,
        force_grad: bool,
    ) -> NodeId {
        let needs_grad = force_grad || parents.iter().any(|&p| self.nodes[p].needs_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            parents,
            backward,
            needs_grad,
        });
        id
    }

    /// Runs reverse accumulation from `loss`, which must hold exactly one
    /// element. Gradients of intermediate nodes are dropped as soon as all
    /// their consumers have been processed; leaf gradients are retained.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(
            self.nodes[loss].value.len(),
            1,
            "backward seed must be a scalar, got shape {:?}",
            self.nodes[loss].value.shape()
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(ArrayD::ones(self.nodes[loss].value.raw_dim()));

        for id in (0..=loss).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || grads[id].is_none() {
                continue;
            }
            let Some(backward) = &node.backward else {
                continue; // leaf: keep the accumulated gradient
            };
            let grad = grads[id].take().expect("checked above");
            let parent_values: Vec<&ArrayD<f64>> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let wants: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].needs_grad)
                .collect();
            let ctx = BackCtx {
                out: &node.value,
                grad: &grad,
                parents: &parent_values,
                wants: &wants,
            };
            let contribs = backward(&ctx);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (slot, contrib) in node.parents.iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                if !self.nodes[*slot].needs_grad {
                    continue;
                }
                debug_assert_eq!(
                    c.shape(),
                    self.nodes[*slot].value.shape(),
                    "gradient shape mismatch for parent {slot}"
                );
                match &mut grads[*slot] {
                    Some(acc) => *acc += &c,
                    empty => *empty = Some(c),
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a node, if one was accumulated. Only leaf
    /// nodes retain gradients after the pass completes.
    pub fn wrt(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}
