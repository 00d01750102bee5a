use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::{Param, ParamId, Scalar, Tensor};
use crate::error::{Error, Result};

/// Backward rule of one recorded primitive.
pub trait BackwardFn<T: Scalar> {
    /// Returns one entry per input: the gradient of the loss with respect to
    /// that input, or `None` when `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

impl<T, F> BackwardFn<T> for F
where
    T: Scalar,
    F: Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>,
{
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        self(inputs, output, grad, needs)
    }
}

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    op: Option<Box<dyn BackwardFn<T>>>,
    name: &'static str,
    requires_grad: bool,
}

struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, usize>,
    consumed: bool,
}

/// Records primitive applications so that [`Graph::backward`] can replay
/// them in reverse. One graph serves one forward/backward pair.
pub struct Graph<T: Scalar> {
    tape: RefCell<Tape<T>>,
    grad_enabled: bool,
}

/// Handle to a value recorded on a [`Graph`].
pub struct Var<'g, T: Scalar> {
    id: usize,
    graph: &'g Graph<T>,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            tape: RefCell::new(Tape {
                nodes: Vec::new(),
                params: HashMap::new(),
                consumed: false,
            }),
            grad_enabled: true,
        }
    }

    /// A graph that records values only; nothing on it is differentiable.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(node);
        Var {
            id: tape.nodes.len() - 1,
            graph: self,
        }
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Leaf that receives a gradient when `requires_grad` is set.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            op: None,
            name: "leaf",
            requires_grad: requires_grad && self.grad_enabled,
        })
    }

    /// Leaf bound to a model parameter. Repeated calls with the same
    /// parameter return the same variable.
    pub fn param(&self, param: &Param<T>) -> Var<'_, T> {
        if let Some(&id) = self.tape.borrow().params.get(&param.id()) {
            return Var { id, graph: self };
        }
        let var = self.leaf(param.value.clone(), true);
        self.tape.borrow_mut().params.insert(param.id(), var.id);
        var
    }

    /// Records the result of a primitive. `inputs` are the operands the
    /// backward rule will see, in order.
    pub fn record(
        &self,
        name: &'static str,
        inputs: &[Var<'_, T>],
        output: Tensor<T>,
        backward: impl Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>
            + 'static,
    ) -> Var<'_, T> {
        assert!(
            inputs.iter().all(|v| std::ptr::eq(v.graph, self)),
            "{name}: operands recorded on a different graph"
        );
        let requires_grad = self.grad_enabled && {
            let tape = self.tape.borrow();
            inputs.iter().any(|v| tape.nodes[v.id].requires_grad)
        };
        let op: Option<Box<dyn BackwardFn<T>>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(Node {
            value: Rc::new(output),
            inputs: inputs.iter().map(|v| v.id).collect(),
            op,
            name,
            requires_grad,
        })
    }

    /// Reverse-mode sweep from a scalar loss. Every differentiable leaf
    /// reachable from `loss` receives a gradient.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let mut tape = self.tape.borrow_mut();
        if tape.consumed {
            return Err(Error::Backward(
                "graph already differentiated; run a new forward pass".into(),
            ));
        }
        let loss_node = &tape.nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.requires_grad {
            return Err(Error::Backward(
                "loss does not depend on any differentiable input".into(),
            ));
        }
        let loss_shape = loss_node.value.shape().to_vec();
        tape.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(Tensor::full(&loss_shape, T::one()));
        let mut leaves = HashMap::new();

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &tape.nodes[id];
            let Some(op) = &node.op else {
                if node.inputs.is_empty() && node.requires_grad {
                    leaves.insert(id, grad);
                }
                continue;
            };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|&i| tape.nodes[i].value.as_ref()).collect();
            let needs: Vec<bool> =
                node.inputs.iter().map(|&i| tape.nodes[i].requires_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.name);
            for ((&input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    tape.nodes[input].value.shape(),
                    "gradient shape from {}",
                    node.name
                );
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        Ok(Gradients {
            by_node: leaves,
            params: tape.params.clone(),
        })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.borrow().nodes[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.tape.borrow().nodes[id].requires_grad
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    /// Owned copy of the current value.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    by_node: HashMap<usize, Tensor<T>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_node.get(&var.id)
    }

    pub fn param(&self, param: &Param<T>) -> Option<&Tensor<T>> {
        self.by_id(param.id())
    }

    pub fn by_id(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|node| self.by_node.get(node))
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}
